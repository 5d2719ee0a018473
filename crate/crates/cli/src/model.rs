//! The trainable state: aggregator parameters, decoder parameters, and the
//! prototype codebook.

use metaslot_core::codebook::PrototypeCodebook;
use metaslot_core::decoder::DecoderParams;
use metaslot_core::rng::{derive_seed, Rng};
use metaslot_core::slots::SlotAttentionParams;
use metaslot_core::{Codebook64, DecoderParams64, SlotAttentionParams64, Tensor64};

use crate::config::TrainConfig;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Model {
    pub sa: SlotAttentionParams64,
    pub dec: DecoderParams64,
    pub codebook: Codebook64,
}

impl Model {
    pub fn init(cfg: &TrainConfig) -> Result<Model> {
        let mut sa_rng = Rng::seed_from_u64(derive_seed(cfg.param_init_seed(), 1));
        let mut dec_rng = Rng::seed_from_u64(derive_seed(cfg.param_init_seed(), 2));
        let mut cb_rng = Rng::seed_from_u64(derive_seed(cfg.param_init_seed(), 3));
        let sa = SlotAttentionParams::init(
            cfg.slot_dim,
            cfg.k_max,
            cfg.sa_hidden,
            cfg.resolved_init_mode(),
            cfg.residual_mlp,
            &mut sa_rng,
        );
        let positions = cfg.scene_height * cfg.scene_width;
        let dec = DecoderParams::init(
            positions,
            cfg.slot_dim,
            cfg.decoder_hidden,
            Some((cfg.scene_height, cfg.scene_width)),
            &mut dec_rng,
        );
        let codebook = PrototypeCodebook::init(
            &mut cb_rng,
            cfg.k_protos,
            cfg.slot_dim,
            cfg.codebook_init_scale,
            cfg.ema_rate,
            cfg.timeout,
        )?;
        Ok(Model { sa, dec, codebook })
    }

    /// Fixed parameter order: aggregator tensors then decoder tensors.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor64)> {
        let mut named = self.sa.named_tensors();
        named.extend(self.dec.named_tensors());
        named
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor64)> {
        let mut named = self.sa.named_tensors_mut();
        named.extend(self.dec.named_tensors_mut());
        named
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.named_tensors().iter().map(|(_, t)| t.len()).collect()
    }
}
