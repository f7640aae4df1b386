//! Spatial and temporal state-space blocks.
//!
//! Both blocks read rows in canonical order, serialize them with a
//! permutation, process the sequence, scatter back and add the block input.

use rand::Rng;

use crate::error::Result;
use crate::sscan::{
    scan_backward, scan_forward_cached, selective_scan, Direction, ScanCache, ScanParams,
};
use crate::tensor::{join_path, Mat, Params, Tensor};

use super::layers::{silu, silu_backward, DwConv1d, LayerNorm, Linear, LnCache};

/// Spatial block: `DWConv -> SiLU -> (forward scan + backward scan) -> LN`
/// along a space-filling-curve order, plus a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmBlock {
    pub conv: DwConv1d,
    pub fwd: ScanParams,
    pub bwd: ScanParams,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct SsmCache {
    xs: Mat,
    conv_out: Mat,
    fwd: ScanCache,
    bwd: ScanCache,
    ln: LnCache,
}

impl SsmBlock {
    pub fn init(channels: usize, state: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        SsmBlock {
            conv: DwConv1d::init(channels, kernel, rng),
            fwd: ScanParams::init(channels, state, rng),
            bwd: ScanParams::init(channels, state, rng),
            norm: LayerNorm::new(channels),
        }
    }

    pub fn zeros(channels: usize, state: usize, kernel: usize) -> Self {
        SsmBlock {
            conv: DwConv1d::zeros(channels, kernel),
            fwd: ScanParams::zeros(channels, state),
            bwd: ScanParams::zeros(channels, state),
            norm: LayerNorm::zeros(channels),
        }
    }

    /// Branch output before the residual, in serialized order.
    fn branch(&self, xs: &Mat) -> Result<Mat> {
        let u = silu(&self.conv.forward(xs));
        let mut s = selective_scan(&u, &self.fwd, Direction::Forward)?;
        s.add_assign(&selective_scan(&u, &self.bwd, Direction::Backward)?);
        Ok(self.norm.forward(&s).0)
    }

    pub fn forward(&self, x: &Mat, perm: &[usize]) -> Result<Mat> {
        let n = self.branch(&x.gather_rows(perm))?;
        Ok(x.add(&n.scatter_rows(perm)))
    }

    pub fn forward_cached(&self, x: &Mat, perm: &[usize]) -> Result<(Mat, SsmCache)> {
        let xs = x.gather_rows(perm);
        let conv_out = self.conv.forward(&xs);
        let u = silu(&conv_out);
        let (mut s, fwd) = scan_forward_cached(&u, &self.fwd, Direction::Forward)?;
        let (sb, bwd) = scan_forward_cached(&u, &self.bwd, Direction::Backward)?;
        s.add_assign(&sb);
        let (n, ln) = self.norm.forward(&s);
        let out = x.add(&n.scatter_rows(perm));
        Ok((
            out,
            SsmCache {
                xs,
                conv_out,
                fwd,
                bwd,
                ln,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &SsmCache,
        perm: &[usize],
        dout: &Mat,
        g: &mut SsmBlock,
    ) -> Result<Mat> {
        let dn = dout.gather_rows(perm);
        let ds = self.norm.backward(&cache.ln, &dn, &mut g.norm);
        let mut du = scan_backward(&cache.fwd, &self.fwd, &ds, &mut g.fwd)?;
        du.add_assign(&scan_backward(&cache.bwd, &self.bwd, &ds, &mut g.bwd)?);
        let dc = silu_backward(&cache.conv_out, &du);
        let dxs = self.conv.backward(&cache.xs, &dc, &mut g.conv);
        Ok(dout.add(&dxs.scatter_rows(perm)))
    }
}

impl Params for SsmBlock {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv.visit(&join_path(prefix, "conv"), f);
        self.fwd.visit(&join_path(prefix, "fwd"), f);
        self.bwd.visit(&join_path(prefix, "bwd"), f);
        self.norm.visit(&join_path(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit_mut(&join_path(prefix, "conv"), f);
        self.fwd.visit_mut(&join_path(prefix, "fwd"), f);
        self.bwd.visit_mut(&join_path(prefix, "bwd"), f);
        self.norm.visit_mut(&join_path(prefix, "norm"), f);
    }
}

/// Temporal block: forward and backward scans along time order, fused by a
/// linear map over their concatenation, then LN and a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct TssmBlock {
    pub fwd: ScanParams,
    pub bwd: ScanParams,
    pub fuse: Linear,
    pub norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct TssmCache {
    fwd: ScanCache,
    bwd: ScanCache,
    cat: Mat,
    ln: LnCache,
}

impl TssmBlock {
    pub fn init(channels: usize, state: usize, rng: &mut impl Rng) -> Self {
        TssmBlock {
            fwd: ScanParams::init(channels, state, rng),
            bwd: ScanParams::init(channels, state, rng),
            fuse: Linear::init(2 * channels, channels, rng),
            norm: LayerNorm::new(channels),
        }
    }

    pub fn zeros(channels: usize, state: usize) -> Self {
        TssmBlock {
            fwd: ScanParams::zeros(channels, state),
            bwd: ScanParams::zeros(channels, state),
            fuse: Linear::zeros(2 * channels, channels),
            norm: LayerNorm::zeros(channels),
        }
    }

    /// `[h_forward | h_backward]` per row, in canonical order.
    pub fn scan_features(&self, x: &Mat, time: &[usize]) -> Result<Mat> {
        let xs = x.gather_rows(time);
        let hf = selective_scan(&xs, &self.fwd, Direction::Forward)?;
        let hb = selective_scan(&xs, &self.bwd, Direction::Backward)?;
        Ok(hf.hcat(&hb).scatter_rows(time))
    }

    /// Branch output before the residual, in canonical order.
    pub fn branch(&self, x: &Mat, time: &[usize]) -> Result<Mat> {
        let cat = self.scan_features(x, time)?;
        Ok(self.norm.forward(&self.fuse.forward(&cat)).0)
    }

    pub fn forward(&self, x: &Mat, time: &[usize]) -> Result<Mat> {
        Ok(x.add(&self.branch(x, time)?))
    }

    pub fn forward_cached(&self, x: &Mat, time: &[usize]) -> Result<(Mat, TssmCache)> {
        let xs = x.gather_rows(time);
        let (hf, fwd) = scan_forward_cached(&xs, &self.fwd, Direction::Forward)?;
        let (hb, bwd) = scan_forward_cached(&xs, &self.bwd, Direction::Backward)?;
        let cat = hf.hcat(&hb);
        let (n, ln) = self.norm.forward(&self.fuse.forward(&cat));
        let out = x.add(&n.scatter_rows(time));
        Ok((out, TssmCache { fwd, bwd, cat, ln }))
    }

    pub fn backward(
        &self,
        cache: &TssmCache,
        time: &[usize],
        dout: &Mat,
        g: &mut TssmBlock,
    ) -> Result<Mat> {
        let dn = dout.gather_rows(time);
        let dz = self.norm.backward(&cache.ln, &dn, &mut g.norm);
        let dcat = self.fuse.backward(&cache.cat, &dz, &mut g.fuse);
        let (dhf, dhb) = dcat.hsplit(self.fwd.channels());
        let mut dxs = scan_backward(&cache.fwd, &self.fwd, &dhf, &mut g.fwd)?;
        dxs.add_assign(&scan_backward(&cache.bwd, &self.bwd, &dhb, &mut g.bwd)?);
        Ok(dout.add(&dxs.scatter_rows(time)))
    }
}

impl Params for TssmBlock {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fwd.visit(&join_path(prefix, "fwd"), f);
        self.bwd.visit(&join_path(prefix, "bwd"), f);
        self.fuse.visit(&join_path(prefix, "fuse"), f);
        self.norm.visit(&join_path(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fwd.visit_mut(&join_path(prefix, "fwd"), f);
        self.bwd.visit_mut(&join_path(prefix, "bwd"), f);
        self.fuse.visit_mut(&join_path(prefix, "fuse"), f);
        self.norm.visit_mut(&join_path(prefix, "norm"), f);
    }
}

/// Spatial block followed by temporal block.
#[derive(Debug, Clone, PartialEq)]
pub struct Stssb {
    pub sssm: SsmBlock,
    pub tssm: TssmBlock,
}

#[derive(Debug, Clone)]
pub struct StssbCache {
    sssm: Option<SsmCache>,
    tssm: Option<TssmCache>,
}

impl Stssb {
    pub fn init(channels: usize, state: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Stssb {
            sssm: SsmBlock::init(channels, state, kernel, rng),
            tssm: TssmBlock::init(channels, state, rng),
        }
    }

    pub fn zeros(channels: usize, state: usize, kernel: usize) -> Self {
        Stssb {
            sssm: SsmBlock::zeros(channels, state, kernel),
            tssm: TssmBlock::zeros(channels, state),
        }
    }

    pub fn param_count(channels: usize, state: usize, kernel: usize) -> usize {
        let scan = channels * state + 2 * state * channels + channels * channels + 2 * channels;
        let sssm =
            DwConv1d::param_count(channels, kernel) + 2 * scan + LayerNorm::param_count(channels);
        let tssm = 2 * scan
            + Linear::param_count(2 * channels, channels)
            + LayerNorm::param_count(channels);
        sssm + tssm
    }

    pub fn forward(
        &self,
        x: &Mat,
        spatial: &[usize],
        time: &[usize],
        use_sssm: bool,
        use_tssm: bool,
    ) -> Result<Mat> {
        let mut h = x.clone();
        if use_sssm {
            h = self.sssm.forward(&h, spatial)?;
        }
        if use_tssm {
            h = self.tssm.forward(&h, time)?;
        }
        Ok(h)
    }

    pub fn forward_cached(
        &self,
        x: &Mat,
        spatial: &[usize],
        time: &[usize],
        use_sssm: bool,
        use_tssm: bool,
    ) -> Result<(Mat, StssbCache)> {
        let mut h = x.clone();
        let mut cache = StssbCache {
            sssm: None,
            tssm: None,
        };
        if use_sssm {
            let (out, c) = self.sssm.forward_cached(&h, spatial)?;
            h = out;
            cache.sssm = Some(c);
        }
        if use_tssm {
            let (out, c) = self.tssm.forward_cached(&h, time)?;
            h = out;
            cache.tssm = Some(c);
        }
        Ok((h, cache))
    }

    pub fn backward(
        &self,
        cache: &StssbCache,
        spatial: &[usize],
        time: &[usize],
        dout: &Mat,
        g: &mut Stssb,
    ) -> Result<Mat> {
        let mut d = dout.clone();
        if let Some(c) = &cache.tssm {
            d = self.tssm.backward(c, time, &d, &mut g.tssm)?;
        }
        if let Some(c) = &cache.sssm {
            d = self.sssm.backward(c, spatial, &d, &mut g.sssm)?;
        }
        Ok(d)
    }
}

impl Params for Stssb {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.sssm.visit(&join_path(prefix, "sssm"), f);
        self.tssm.visit(&join_path(prefix, "tssm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.sssm.visit_mut(&join_path(prefix, "sssm"), f);
        self.tssm.visit_mut(&join_path(prefix, "tssm"), f);
    }
}
