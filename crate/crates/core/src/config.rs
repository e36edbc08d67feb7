//! Human-editable run configuration. One file mirrors the hyperparameters
//! (scalar values broadcast over the feature dimension), the sampler
//! settings and the synthesis plan. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{FitConfig, Mode};
use crate::synthesis::SynthesisPlan;
use crate::types::HyperParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSection {
    pub mu: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub thres: f64,
    pub segment_gap: u32,
    pub pixel_weight: f64,
    pub min_cluster_size: usize,
    pub purity_threshold: f64,
    pub min_segment_frames: u32,
}

impl Default for HyperSection {
    fn default() -> Self {
        let h = HyperParams::isotropic(1);
        HyperSection {
            mu: h.mu[0],
            sigma0: h.sigma0[0],
            sigma1: h.sigma1[0],
            c: h.c,
            alpha: h.alpha,
            beta: h.beta,
            gamma: h.gamma,
            kappa1: h.kappa1,
            kappa2: h.kappa2,
            thres: h.thres,
            segment_gap: h.segment_gap,
            pixel_weight: h.pixel_weight,
            min_cluster_size: h.min_cluster_size,
            purity_threshold: h.purity_threshold,
            min_segment_frames: h.min_segment_frames,
        }
    }
}

impl HyperSection {
    /// Broadcasts the scalar fields over `dim` dimensions.
    pub fn to_hyper(&self, dim: usize) -> HyperParams {
        HyperParams {
            mu: vec![self.mu; dim],
            sigma0: vec![self.sigma0; dim],
            sigma1: vec![self.sigma1; dim],
            c: self.c,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            thres: self.thres,
            segment_gap: self.segment_gap,
            pixel_weight: self.pixel_weight,
            min_cluster_size: self.min_cluster_size,
            purity_threshold: self.purity_threshold,
            min_segment_frames: self.min_segment_frames,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub mode: Mode,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub online: bool,
    pub online_samples_per_point: usize,
    pub hyper_update_enabled: bool,
    pub chains: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            mode: Mode::Tccrp,
            n_sweeps: 200,
            burn_in: 100,
            seed: 0,
            online: false,
            online_samples_per_point: 15,
            hyper_update_enabled: true,
            chains: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub mode: Mode,
    pub n_tracklets: usize,
    pub dim: usize,
    pub seed: u64,
    pub tracklet_len: u32,
    pub min_chain_len: usize,
    pub mean_chain_len: f64,
    pub overlap_rate: f64,
    pub overlap_start: usize,
    pub n_segments: usize,
    pub max_components: Option<usize>,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let p = SynthesisPlan::new(2000, 25, 0);
        SynthesisSection {
            mode: Mode::Tccrp,
            n_tracklets: p.n_tracklets,
            dim: p.dim,
            seed: p.seed,
            tracklet_len: p.tracklet_len,
            min_chain_len: p.min_chain_len,
            mean_chain_len: p.mean_chain_len,
            overlap_rate: p.overlap_rate,
            overlap_start: p.overlap_start,
            n_segments: p.n_segments,
            max_components: None,
        }
    }
}

impl SynthesisSection {
    pub fn to_plan(&self) -> SynthesisPlan {
        SynthesisPlan {
            n_tracklets: self.n_tracklets,
            dim: self.dim,
            seed: self.seed,
            tracklet_len: self.tracklet_len,
            min_chain_len: self.min_chain_len,
            mean_chain_len: self.mean_chain_len,
            overlap_rate: self.overlap_rate,
            overlap_start: self.overlap_start,
            n_segments: self.n_segments,
            max_components: self.max_components,
        }
    }
}

/// Full run configuration; `init-config` emits it with every default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub hyper: HyperSection,
    pub fit: FitSection,
    pub synthesis: SynthesisSection,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.to_hyper(1).validate()?;
        self.fit_config(1).validate()?;
        if self.fit.chains == 0 {
            return Err(Error::Config("fit: chains must be at least 1".into()));
        }
        self.synthesis.to_plan().validate(&self.hyper.to_hyper(self.synthesis.dim))?;
        Ok(())
    }

    /// Sampler configuration for data of dimension `dim`.
    pub fn fit_config(&self, dim: usize) -> FitConfig {
        FitConfig {
            mode: self.fit.mode,
            n_sweeps: self.fit.n_sweeps,
            burn_in: self.fit.burn_in,
            seed: self.fit.seed,
            online: self.fit.online,
            online_samples_per_point: self.fit.online_samples_per_point,
            hyper_update_enabled: self.fit.hyper_update_enabled,
            hyper: self.hyper.to_hyper(dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default().to_toml();
        text.push_str("\n[hyper2]\nx = 1\n");
        assert!(RunConfig::from_toml(&text).is_err());
        let text = "[hyper]\nsigmaz = 4.0\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("sigmaz") || err.to_string().contains("unknown"));
    }

    #[test]
    fn invalid_values_get_actionable_messages() {
        let text = "[hyper]\nkappa1 = 0.5\nkappa2 = 0.1\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("kappa"), "{err}");
    }
}
