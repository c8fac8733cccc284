//! Single-level orthonormal Haar decomposition as a four-band bundle.
//!
//! The per-block transform is its own inverse (the 4×4 mixing matrix is
//! symmetric and orthonormal), so synthesis uses the same ±½ sums as
//! analysis and the roundtrip is exact up to floating-point rounding.

use crate::tensor::{Band, Graph, Var};
use crate::Result;

/// The four half-resolution sub-bands of one analysis level: `ll` is the
/// coarse approximation, `lh`/`hl`/`hh` hold horizontal/vertical/diagonal
/// detail.
#[derive(Clone, Copy)]
pub struct WaveletQuad {
    pub ll: Var,
    pub lh: Var,
    pub hl: Var,
    pub hh: Var,
}

/// Decompose (N,C,H,W) into four (N,C,H/2,W/2) bands. H and W must be even.
pub fn dwt2(g: &mut Graph, x: Var) -> Result<WaveletQuad> {
    Ok(WaveletQuad {
        ll: g.dwt2_band(x, Band::Ll)?,
        lh: g.dwt2_band(x, Band::Lh)?,
        hl: g.dwt2_band(x, Band::Hl)?,
        hh: g.dwt2_band(x, Band::Hh)?,
    })
}

/// Reassemble four (N,C,h,w) bands into (N,C,2h,2w).
pub fn idwt2(g: &mut Graph, q: WaveletQuad) -> Result<Var> {
    g.idwt2(q.ll, q.lh, q.hl, q.hh)
}
