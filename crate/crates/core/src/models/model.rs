use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::MeshBank;
use crate::error::{Error, Result};
use crate::grad::{Bound, ParamStore, Tape, Tensor, Var};
use crate::meshcore::FieldSample;
use crate::mpnn::{Centering, LayerKind, MlpBlock, MpnnLayer, MLP_HIDDEN_LAYERS};

/// Architecture hyperparameters; everything needed to rebuild the parameter
/// layout of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub kind: LayerKind,
    pub centering: Centering,
    pub hidden: usize,
    pub lr_layers: usize,
    pub hr_layers: usize,
    /// Neighbours used by every kNN projection.
    pub k: usize,
    pub field_dim: usize,
    pub space_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            kind: LayerKind::Mgn,
            centering: Centering::BOTH,
            hidden: 30,
            lr_layers: 3,
            hr_layers: 3,
            k: 3,
            field_dim: 1,
            space_dim: 2,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.k == 0 || self.field_dim == 0 || self.space_dim == 0 {
            return Err(Error::Config(
                "hidden, k, field_dim and space_dim must all be positive".into(),
            ));
        }
        if self.kind == LayerKind::Gcn && self.centering.message {
            return Err(Error::Config("gcn supports node centering only".into()));
        }
        Ok(())
    }
}

fn mlp_dims(input: usize, hidden: usize, output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(hidden, MLP_HIDDEN_LAYERS));
    d.push(output);
    d
}

/// Encoder, LR processor, latent upsampler and HR processor.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedExtractor {
    pub encoder: MlpBlock,
    /// Edge-feature encoder, present only for edge-aware layers. The same
    /// encoder embeds LR and HR edges.
    pub edge_encoder: Option<MlpBlock>,
    pub lr_layers: Vec<MpnnLayer>,
    pub hr_layers: Vec<MpnnLayer>,
    pub k: usize,
}

impl SharedExtractor {
    /// Latent embeddings on the nodes of `hr_mesh` for the LR sample `lr`.
    pub fn extract(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        lr: &FieldSample,
        hr_mesh: usize,
    ) -> Result<Var> {
        let feats = tape.constant(bank.node_features(lr)?);
        let mut x = self.encoder.forward(tape, p, feats)?;
        x = self.process(tape, p, bank, lr.mesh_id, x, &self.lr_layers)?;
        x = project(tape, bank, x, lr.mesh_id, hr_mesh, self.k)?;
        self.process(tape, p, bank, hr_mesh, x, &self.hr_layers)
    }

    fn process(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        mesh: usize,
        mut x: Var,
        layers: &[MpnnLayer],
    ) -> Result<Var> {
        if layers.is_empty() {
            return Ok(x);
        }
        let entry = bank.entry(mesh)?;
        let mut e = match &self.edge_encoder {
            Some(enc) => {
                let raw = tape.constant(entry.edges.clone());
                Some(enc.forward(tape, p, raw)?)
            }
            None => None,
        };
        for layer in layers {
            let out = layer.forward(tape, p, &entry.graph, x, e)?;
            x = out.x;
            e = out.e;
        }
        Ok(x)
    }
}

/// kNN projection of a tape value between meshes; identity on a shared mesh.
pub fn project(
    tape: &mut Tape,
    bank: &MeshBank,
    x: Var,
    src: usize,
    dst: usize,
    k: usize,
) -> Result<Var> {
    match bank.projection(src, dst, k)? {
        None => Ok(x),
        Some(mix) => tape.mix(x, mix),
    }
}

/// Parameters of F (extractor + `decoder_f`) and G (the same extractor +
/// `decoder_g`), held in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    pub store: ParamStore,
    pub shared: SharedExtractor,
    pub decoder_f: MlpBlock,
    pub decoder_g: MlpBlock,
}

impl ModelParams {
    /// Fresh parameters. Weight matrices are uniform in `±1/√fan_in`, biases
    /// zero, and the final layer of both decoders zero so the model starts at
    /// the kNN-upsampling baseline.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = arch.hidden;
        let encoder = MlpBlock::new(
            &mut store,
            &mut rng,
            "encoder",
            &mlp_dims(arch.field_dim + arch.space_dim, h, h),
            false,
        )?;
        let edge_encoder = if arch.kind.uses_edges() {
            Some(MlpBlock::new(
                &mut store,
                &mut rng,
                "edge_encoder",
                &mlp_dims(2 * arch.space_dim, h, h),
                false,
            )?)
        } else {
            None
        };
        let mut stack = |prefix: &str, count: usize| -> Result<Vec<MpnnLayer>> {
            (0..count)
                .map(|i| {
                    MpnnLayer::new(
                        arch.kind,
                        arch.centering,
                        h,
                        &mut store,
                        &mut rng,
                        &format!("{prefix}.{i}"),
                    )
                })
                .collect()
        };
        let lr_layers = stack("lr", arch.lr_layers)?;
        let hr_layers = stack("hr", arch.hr_layers)?;
        let decoder_f = MlpBlock::new(
            &mut store,
            &mut rng,
            "decoder_f",
            &mlp_dims(h, h, arch.field_dim),
            true,
        )?;
        let decoder_g = MlpBlock::new(
            &mut store,
            &mut rng,
            "decoder_g",
            &mlp_dims(h, h, arch.field_dim),
            true,
        )?;
        Ok(ModelParams {
            shared: SharedExtractor {
                encoder,
                edge_encoder,
                lr_layers,
                hr_layers,
                k: arch.k,
            },
            arch,
            store,
            decoder_f,
            decoder_g,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn k(&self) -> usize {
        self.arch.k
    }

    pub fn extract(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        lr: &FieldSample,
        hr_mesh: usize,
    ) -> Result<Var> {
        self.shared.extract(tape, p, bank, lr, hr_mesh)
    }

    /// Normalized LR field upsampled onto `hr_mesh` (a constant).
    pub fn upsample_lr(
        &self,
        tape: &mut Tape,
        bank: &MeshBank,
        lr: &FieldSample,
        hr_mesh: usize,
    ) -> Result<Var> {
        let up = bank.project(&bank.field(lr)?, lr.mesh_id, hr_mesh, self.k())?;
        Ok(tape.constant(up))
    }

    /// `D_F(latent) + kNN(u_l)` given the latent from [`ModelParams::extract`].
    pub fn decode_f(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        latent: Var,
        lr: &FieldSample,
        hr_mesh: usize,
    ) -> Result<Var> {
        let dec = self.decoder_f.forward(tape, p, latent)?;
        let base = self.upsample_lr(tape, bank, lr, hr_mesh)?;
        tape.add(dec, base)
    }

    /// HR prediction û_h on `hr_mesh`, in normalized units.
    pub fn forward_f(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        lr: &FieldSample,
        hr_mesh: usize,
    ) -> Result<Var> {
        let latent = self.extract(tape, p, bank, lr, hr_mesh)?;
        self.decode_f(tape, p, bank, latent, lr, hr_mesh)
    }

    /// Predicted HR difference `r − s` on the HR mesh of `r`, from latents
    /// already extracted on each sample's HR mesh.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_g(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        (latent_r, lr_r, hr_r): (Var, &FieldSample, usize),
        (latent_s, lr_s, hr_s): (Var, &FieldSample, usize),
    ) -> Result<Var> {
        let k = self.k();
        let aligned = project(tape, bank, latent_s, hr_s, hr_r, k)?;
        let diff = tape.sub(latent_r, aligned)?;
        let dec = self.decoder_g.forward(tape, p, diff)?;
        let up_r = bank.project(&bank.field(lr_r)?, lr_r.mesh_id, hr_r, k)?;
        let up_s = bank.project(&bank.field(lr_s)?, lr_s.mesh_id, hr_r, k)?;
        let base = tape.constant(up_r.sub(&up_s)?);
        tape.add(dec, base)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_g(
        &self,
        tape: &mut Tape,
        p: &Bound,
        bank: &MeshBank,
        lr_r: &FieldSample,
        hr_r: usize,
        lr_s: &FieldSample,
        hr_s: usize,
    ) -> Result<Var> {
        let latent_r = self.extract(tape, p, bank, lr_r, hr_r)?;
        let latent_s = self.extract(tape, p, bank, lr_s, hr_s)?;
        self.decode_g(
            tape,
            p,
            bank,
            (latent_r, lr_r, hr_r),
            (latent_s, lr_s, hr_s),
        )
    }

    /// F's prediction as a plain tensor, in normalized units.
    pub fn predict(&self, bank: &MeshBank, lr: &FieldSample, hr_mesh: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind_frozen(&mut tape);
        let out = self.forward_f(&mut tape, &p, bank, lr, hr_mesh)?;
        Ok(tape.value(out).clone())
    }

    /// Binds parameters as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.store.bind(tape)
    }

    /// Binds parameters without recording gradients (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        self.store.bind_constants(tape)
    }
}

/// Ground-truth HR difference `u_h^r − kNN(u_h^s; P_h^s → P_h^r)` in
/// normalized units.
pub fn target_g(
    bank: &MeshBank,
    hr_r: &FieldSample,
    hr_s: &FieldSample,
    k: usize,
) -> Result<Tensor> {
    let projected = bank.project(&bank.field(hr_s)?, hr_s.mesh_id, hr_r.mesh_id, k)?;
    bank.field(hr_r)?.sub(&projected)
}

/// Plain kNN upsampling of `u_l` onto `hr_mesh`, in normalized units.
pub fn knn_baseline(bank: &MeshBank, lr: &FieldSample, hr_mesh: usize, k: usize) -> Result<Tensor> {
    bank.project(&bank.field(lr)?, lr.mesh_id, hr_mesh, k)
}
