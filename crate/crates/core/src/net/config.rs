use crate::error::{Error, Result};
use crate::kv::{join_list, KvMap};
use crate::serialize::{Curve, DEFAULT_GRID_BITS};
use crate::sscan::DEFAULT_STATE_SIZE;

/// Architecture of the encoder/decoder network.
///
/// `channels[s]` and `enc_depths[s]` describe encoder stage `s`;
/// `dec_depths[s]` the decoder stage that restores level `s`, so there is one
/// fewer decoder stage than encoder stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
    pub enc_depths: Vec<usize>,
    pub dec_depths: Vec<usize>,
    pub pool_scale: usize,
    pub state_size: usize,
    pub kernel: usize,
    pub pol_dim: usize,
    pub grid_bits: u32,
    /// Multiplier on the normalized coordinates fed to the embedding;
    /// 1.0 keeps `x / width`, `y / height` and `z` as they are.
    pub coord_scale: f64,
    /// Subtract 0.5 from each normalized coordinate before scaling.
    pub coord_center: bool,
    /// Curve used by spatial block `i` of a stage is `curves[i % len]`.
    pub curves: Vec<Curve>,
    /// Order whose consecutive runs are pooled.
    pub pool_curve: Curve,
    pub use_geom: bool,
    pub use_pol: bool,
    pub use_sssm: bool,
    pub use_tssm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full()
    }
}

impl ModelConfig {
    /// Channels 8 -> 16, encoder depths [2, 4], decoder depth [2].
    pub fn full() -> Self {
        ModelConfig {
            channels: vec![8, 16],
            enc_depths: vec![2, 4],
            dec_depths: vec![2],
            pool_scale: 2,
            state_size: DEFAULT_STATE_SIZE,
            kernel: 3,
            pol_dim: 4,
            grid_bits: DEFAULT_GRID_BITS,
            coord_scale: 1.0,
            coord_center: false,
            curves: vec![Curve::Hilbert, Curve::Zorder],
            pool_curve: Curve::Hilbert,
            use_geom: true,
            use_pol: true,
            use_sssm: true,
            use_tssm: true,
        }
    }

    /// Channels [4, 8], depths [1, 1] / [1], state size 2.
    pub fn tiny() -> Self {
        ModelConfig {
            channels: vec![4, 8],
            enc_depths: vec![1, 1],
            dec_depths: vec![1],
            state_size: 2,
            ..ModelConfig::full()
        }
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Split of the first-stage width between the geometric and polarity
    /// embeddings.
    pub fn cfe_split(&self) -> (usize, usize) {
        let c0 = self.channels[0];
        (c0 / 2, c0 - c0 / 2)
    }

    pub fn curve_for_block(&self, block: usize) -> Curve {
        self.curves[block % self.curves.len()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!(
                "channels must be non-empty and positive: {:?}",
                self.channels
            ));
        }
        if self.channels[0] < 2 {
            return bad("first stage needs at least 2 channels".into());
        }
        if self.enc_depths.len() != self.channels.len() {
            return bad(format!(
                "{} encoder depths for {} stages",
                self.enc_depths.len(),
                self.channels.len()
            ));
        }
        if self.dec_depths.len() + 1 != self.channels.len() {
            return bad(format!(
                "{} decoder depths for {} stages (need one fewer)",
                self.dec_depths.len(),
                self.channels.len()
            ));
        }
        if self.pool_scale < 2 {
            return bad(format!(
                "pool scale must be at least 2, got {}",
                self.pool_scale
            ));
        }
        if self.state_size == 0 || self.pol_dim == 0 {
            return bad("state size and polarity embedding width must be positive".into());
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.grid_bits == 0 || self.grid_bits > 21 {
            return bad(format!(
                "grid bits must be in 1..=21, got {}",
                self.grid_bits
            ));
        }
        if !(self.coord_scale.is_finite() && self.coord_scale > 0.0) {
            return bad(format!(
                "coord scale must be positive, got {}",
                self.coord_scale
            ));
        }
        if self.curves.is_empty() || self.curves.contains(&Curve::Time) {
            return bad("spatial curves must be a non-empty list of hilbert/zorder".into());
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        kv.read_list_into("channels", &mut self.channels)?;
        kv.read_list_into("enc_depths", &mut self.enc_depths)?;
        kv.read_list_into("dec_depths", &mut self.dec_depths)?;
        kv.read_into("pool_scale", &mut self.pool_scale)?;
        kv.read_into("state_size", &mut self.state_size)?;
        kv.read_into("kernel", &mut self.kernel)?;
        kv.read_into("pol_dim", &mut self.pol_dim)?;
        kv.read_into("grid_bits", &mut self.grid_bits)?;
        kv.read_into("coord_scale", &mut self.coord_scale)?;
        kv.read_into("coord_center", &mut self.coord_center)?;
        kv.read_list_into("curves", &mut self.curves)?;
        kv.read_into("pool_curve", &mut self.pool_curve)?;
        kv.read_into("use_geom", &mut self.use_geom)?;
        kv.read_into("use_pol", &mut self.use_pol)?;
        kv.read_into("use_sssm", &mut self.use_sssm)?;
        kv.read_into("use_tssm", &mut self.use_tssm)?;
        self.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "channels",
        "enc_depths",
        "dec_depths",
        "pool_scale",
        "state_size",
        "kernel",
        "pol_dim",
        "grid_bits",
        "coord_scale",
        "coord_center",
        "curves",
        "pool_curve",
        "use_geom",
        "use_pol",
        "use_sssm",
        "use_tssm",
    ];

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("channels", join_list(&self.channels));
        kv.set("enc_depths", join_list(&self.enc_depths));
        kv.set("dec_depths", join_list(&self.dec_depths));
        kv.set("pool_scale", self.pool_scale);
        kv.set("state_size", self.state_size);
        kv.set("kernel", self.kernel);
        kv.set("pol_dim", self.pol_dim);
        kv.set("grid_bits", self.grid_bits);
        kv.set("coord_scale", self.coord_scale);
        kv.set("coord_center", self.coord_center);
        kv.set("curves", join_list(&self.curves));
        kv.set("pool_curve", self.pool_curve);
        kv.set("use_geom", self.use_geom);
        kv.set("use_pol", self.use_pol);
        kv.set("use_sssm", self.use_sssm);
        kv.set("use_tssm", self.use_tssm);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let mut cfg = ModelConfig::tiny();
        cfg.use_tssm = false;
        cfg.curves = vec![Curve::Zorder];
        cfg.coord_scale = 16.0;
        cfg.coord_center = true;
        let mut back = ModelConfig::full();
        back.apply_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::full().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let mut c = ModelConfig::full();
        c.dec_depths = vec![2, 2];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::full();
        c.pool_scale = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::full();
        c.kernel = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::full();
        c.curves = vec![Curve::Time];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::full();
        c.channels = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn curve_schedule_alternates() {
        let c = ModelConfig::full();
        assert_eq!(c.curve_for_block(0), Curve::Hilbert);
        assert_eq!(c.curve_for_block(1), Curve::Zorder);
        assert_eq!(c.curve_for_block(2), Curve::Hilbert);
    }
}
