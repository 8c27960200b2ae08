//! Support code for the `unic` binary: the session server and argument
//! parsing helpers.

pub mod server;

use anyhow::{bail, Context};
use unic_core::BBox;

/// Parses `x,y,w,h` into a box.
pub fn parse_box(s: &str) -> anyhow::Result<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number `{p}`")))
        .collect::<anyhow::Result<_>>()?;
    let [x, y, w, h] = v[..] else {
        bail!("expected x,y,w,h, got `{s}`");
    };
    Ok(BBox::new(x, y, w, h)?)
}
