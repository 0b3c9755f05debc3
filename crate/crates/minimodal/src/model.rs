//! The unified model: decoupled visual encoders over one shared language
//! backbone.
//!
//! Three task pipelines share parameters:
//! * generation — prompt text plus visible image tokens flow through the
//!   backbone; its hidden states at image positions are mapped into the MAR
//!   decoder as per-position conditioning; the diffusion head predicts noise
//!   on masked tokens.
//! * understanding — semantic-encoder patches are projected into the
//!   backbone and answer tokens are scored with cross-entropy.
//! * editing — the fully visible MAR-encoded source image conditions
//!   generation of the target tokens (same diffusion loss).

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, LMConfig, SegmentKind, SequenceLayout, Vocab};
use crate::backbone::vocab::{BOI, BOS, EOI, EOS, NULL_PROMPT, SEP_EDIT};
use crate::codec::{Codec, CodecConfig, TokenGrid};
use crate::error::{Error, Result};
use crate::gen::head::DiffusionLossOutput;
use crate::gen::{
    cfg_combine, commit_counts, denoise_sample, diffusion_loss, DiffusionHead,
    DiffusionHeadConfig, Mar, MarConfig, MaskPlan, NoiseSchedule,
};
use crate::linalg::l2_norm;
use crate::nn::{Grads, Init, Linear, Mlp, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{tag, Rng};
use crate::scene::Image;
use crate::und::{SemanticEncoder, SemanticEncoderConfig};

/// How editing conditions on the source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditSourceEncoding {
    /// MAR-encoded source tokens only (default).
    Mar,
    /// MAR tokens plus a semantic-encoder segment (ablation switch).
    MarPlusSemantic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lm: LMConfig,
    pub mar: MarConfig,
    pub sem: SemanticEncoderConfig,
    pub head: DiffusionHeadConfig,
    pub codec: CodecConfig,
    /// Generation image side in pixels (switches across stages).
    pub gen_side: usize,
    /// Understanding image side in pixels (fixed).
    pub und_side: usize,
    /// Fraction of generation batches trained with the null prompt.
    pub cfg_drop_prob: f64,
    pub edit_source: EditSourceEncoding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let codec = CodecConfig::default();
        ModelConfig {
            lm: LMConfig::default(),
            mar: MarConfig {
                token_dim: codec.token_dim(),
                grid_side: 8,
                ..Default::default()
            },
            sem: SemanticEncoderConfig::default(),
            head: DiffusionHeadConfig::default(),
            codec,
            gen_side: 16,
            und_side: 32,
            cfg_drop_prob: 0.1,
            edit_source: EditSourceEncoding::Mar,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and the acceptance suite: same
    /// architecture, desk-top-of-the-desk sizes.
    pub fn tiny() -> Self {
        let codec = CodecConfig::default();
        ModelConfig {
            lm: LMConfig {
                layers: 3,
                width: 64,
                heads: 4,
                mlp_ratio: 2,
                max_seq_len: 600,
            },
            mar: MarConfig {
                enc_layers: 2,
                dec_layers: 2,
                width: 64,
                heads: 4,
                mlp_ratio: 2,
                token_dim: codec.token_dim(),
                grid_side: 8,
            },
            sem: SemanticEncoderConfig {
                patch_size: 8,
                layers: 2,
                width: 64,
                heads: 4,
                mlp_ratio: 2,
            },
            head: DiffusionHeadConfig {
                mlp_width: 96,
                time_embed_dim: 16,
                ..Default::default()
            },
            codec,
            gen_side: 16,
            und_side: 32,
            cfg_drop_prob: 0.1,
            edit_source: EditSourceEncoding::Mar,
        }
    }

    /// Even smaller: for finite-difference gradient checks.
    pub fn toy() -> Self {
        let codec = CodecConfig::default();
        ModelConfig {
            lm: LMConfig {
                layers: 2,
                width: 16,
                heads: 2,
                mlp_ratio: 2,
                max_seq_len: 200,
            },
            mar: MarConfig {
                enc_layers: 1,
                dec_layers: 1,
                width: 16,
                heads: 2,
                mlp_ratio: 2,
                token_dim: codec.token_dim(),
                grid_side: 4,
            },
            sem: SemanticEncoderConfig {
                patch_size: 8,
                layers: 1,
                width: 16,
                heads: 2,
                mlp_ratio: 2,
            },
            head: DiffusionHeadConfig {
                timesteps: 10,
                mlp_width: 16,
                time_embed_dim: 8,
                ..Default::default()
            },
            codec,
            gen_side: 8,
            und_side: 32,
            cfg_drop_prob: 0.1,
            edit_source: EditSourceEncoding::Mar,
        }
    }
}

/// Parameter-group prefixes; stage freezing and checkpoints select by these.
pub mod groups {
    pub const BACKBONE: &str = "backbone.";
    pub const UND_ENC: &str = "und_enc.";
    pub const UND_PROJ: &str = "und_proj.";
    pub const GEN_PROJ: &str = "gen_proj.";
    pub const COND_MAP: &str = "cond_map.";
    pub const MAR: &str = "mar.";
    pub const DIFF_HEAD: &str = "diff_head.";

    pub const ALL: [&str; 7] = [
        BACKBONE, UND_ENC, UND_PROJ, GEN_PROJ, COND_MAP, MAR, DIFF_HEAD,
    ];
}

pub struct UnifiedModel<T: Real> {
    pub store: ParamStore<T>,
    pub vocab: Vocab,
    pub backbone: Backbone,
    pub sem: SemanticEncoder,
    pub und_proj: Mlp,
    pub gen_proj: Mlp,
    pub gen_mask_embed: ParamId,
    pub cond_map: Linear,
    pub mar: Mar,
    pub head: DiffusionHead,
    pub schedule: NoiseSchedule,
    pub cfg: ModelConfig,
}

impl<T: Real> UnifiedModel<T> {
    pub fn new(mut cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::derived(seed, &[tag::INIT]);
        let mut store = ParamStore::new();
        let vocab = Vocab::core();
        cfg.mar.token_dim = cfg.codec.token_dim();
        cfg.mar.grid_side = cfg.codec.token_side(cfg.gen_side)?;

        let backbone = Backbone::new(&mut store, vocab.len(), cfg.lm.clone(), &mut rng);
        let sem = SemanticEncoder::new(&mut store, cfg.sem.clone(), cfg.und_side, &mut rng)?;
        // two separate two-layer projectors into the backbone space
        let und_proj = Mlp::new(
            &mut store,
            "und_proj",
            cfg.sem.width,
            cfg.lm.width,
            cfg.lm.width,
            &mut rng,
        );
        let gen_proj = Mlp::new(
            &mut store,
            "gen_proj",
            cfg.mar.width,
            cfg.lm.width,
            cfg.lm.width,
            &mut rng,
        );
        let gen_mask_embed = store.add(
            "gen_proj.mask_embed",
            &[1, cfg.lm.width],
            Init::Normal(0.02),
            &mut rng,
        );
        let cond_map = Linear::new(&mut store, "cond_map.map", cfg.lm.width, cfg.mar.width, &mut rng);
        let mar = Mar::new(&mut store, cfg.mar.clone(), &mut rng);
        let head = DiffusionHead::new(
            &mut store,
            cfg.mar.token_dim,
            cfg.mar.width,
            cfg.head.clone(),
            &mut rng,
        );
        let schedule = head.schedule();
        Ok(UnifiedModel {
            store,
            vocab,
            backbone,
            sem,
            und_proj,
            gen_proj,
            gen_mask_embed,
            cond_map,
            mar,
            head,
            schedule,
            cfg,
        })
    }

    pub fn n_gen_tokens(&self) -> usize {
        self.mar.n_tokens(&self.store)
    }

    fn special(&self, w: &str) -> usize {
        self.vocab.id(w).expect("special token in vocab")
    }

    // ----- sequence assembly -------------------------------------------------

    /// [BOI, und_image, EOI, question, answer, EOS]; loss positions are the
    /// answer tokens plus EOS.
    pub fn assemble_understanding(
        &self,
        und_embs: &[T],
        question_ids: &[usize],
        answer_ids: &[usize],
    ) -> Result<(Vec<T>, SequenceLayout, Vec<usize>)> {
        let w = self.cfg.lm.width;
        let n_img = und_embs.len() / w;
        let tail_ids: Vec<usize> = [self.special(EOI)]
            .into_iter()
            .chain(question_ids.iter().copied())
            .chain(answer_ids.iter().copied())
            .chain([self.special(EOS)])
            .collect();
        let mut layout = SequenceLayout::new(&[
            (SegmentKind::Text, 1),
            (SegmentKind::UndImage, n_img),
            (SegmentKind::Text, tail_ids.len()),
        ]);
        layout.check_len(self.cfg.lm.max_seq_len)?;
        let answer_start = 1 + n_img + 1 + question_ids.len();
        for p in answer_start..layout.len() {
            layout.loss_mask[p] = true;
        }
        let mut ids_per_pos = vec![usize::MAX; layout.len()];
        ids_per_pos[0] = self.special(BOI);
        for (i, &id) in tail_ids.iter().enumerate() {
            ids_per_pos[1 + n_img + i] = id;
        }
        let mut embs = vec![T::ZERO; layout.len() * w];
        embs[0..w].copy_from_slice(&self.backbone.emb.gather(&self.store, &[ids_per_pos[0]]));
        embs[w..(1 + n_img) * w].copy_from_slice(und_embs);
        let tail_embs = self.backbone.emb.gather(&self.store, &tail_ids);
        embs[(1 + n_img) * w..].copy_from_slice(&tail_embs);
        Ok((embs, layout, ids_per_pos))
    }

    /// [BOS, prompt, BOI, gen_image(visible projected + mask placeholders), EOI]
    pub fn assemble_generation(
        &self,
        prompt_ids: &[usize],
        proj_visible: &[T],
        visible_positions: &[usize],
    ) -> Result<(Vec<T>, SequenceLayout, Vec<usize>)> {
        let w = self.cfg.lm.width;
        let n = self.n_gen_tokens();
        let head_ids: Vec<usize> = [self.special(BOS)]
            .into_iter()
            .chain(prompt_ids.iter().copied())
            .chain([self.special(BOI)])
            .collect();
        let mut layout = SequenceLayout::new(&[
            (SegmentKind::Text, head_ids.len()),
            (SegmentKind::GenImage, n),
            (SegmentKind::Text, 1),
        ]);
        layout.check_len(self.cfg.lm.max_seq_len)?;
        let mut ids_per_pos = vec![usize::MAX; layout.len()];
        for (i, &id) in head_ids.iter().enumerate() {
            ids_per_pos[i] = id;
        }
        ids_per_pos[layout.len() - 1] = self.special(EOI);

        let mut embs = vec![T::ZERO; layout.len() * w];
        let head_embs = self.backbone.emb.gather(&self.store, &head_ids);
        embs[..head_ids.len() * w].copy_from_slice(&head_embs);
        let span_start = head_ids.len();
        let mask_embed = self.store.value(self.gen_mask_embed).to_vec();
        for p in 0..n {
            embs[(span_start + p) * w..(span_start + p + 1) * w].copy_from_slice(&mask_embed);
        }
        for (r, &p) in visible_positions.iter().enumerate() {
            embs[(span_start + p) * w..(span_start + p + 1) * w]
                .copy_from_slice(&proj_visible[r * w..(r + 1) * w]);
        }
        let eoi = self.backbone.emb.gather(&self.store, &[ids_per_pos[layout.len() - 1]]);
        let last = layout.len() - 1;
        embs[last * w..].copy_from_slice(&eoi);
        Ok((embs, layout, ids_per_pos))
    }

    /// [BOS, BOI, source, EOI, instruction, SEP_EDIT, BOI, target, EOI]
    /// (optionally with a semantic source segment after the MAR source).
    #[allow(clippy::too_many_arguments)]
    pub fn assemble_editing(
        &self,
        proj_source: &[T],
        sem_source: Option<&[T]>,
        instruction_ids: &[usize],
        proj_tgt_visible: &[T],
        tgt_visible_positions: &[usize],
    ) -> Result<(Vec<T>, SequenceLayout, Vec<usize>)> {
        let w = self.cfg.lm.width;
        let n = self.n_gen_tokens();
        let n_src = proj_source.len() / w;
        let n_sem = sem_source.map_or(0, |s| s.len() / w);

        let mut segs: Vec<(SegmentKind, usize)> = vec![
            (SegmentKind::Text, 2), // BOS BOI
            (SegmentKind::GenImage, n_src),
        ];
        if n_sem > 0 {
            segs.push((SegmentKind::UndImage, n_sem));
        }
        let mid_ids: Vec<usize> = [self.special(EOI)]
            .into_iter()
            .chain(instruction_ids.iter().copied())
            .chain([self.special(SEP_EDIT), self.special(BOI)])
            .collect();
        segs.push((SegmentKind::Text, mid_ids.len()));
        segs.push((SegmentKind::GenImage, n));
        segs.push((SegmentKind::Text, 1)); // EOI
        let layout = SequenceLayout::new(&segs);
        layout.check_len(self.cfg.lm.max_seq_len)?;

        let mut ids_per_pos = vec![usize::MAX; layout.len()];
        ids_per_pos[0] = self.special(BOS);
        ids_per_pos[1] = self.special(BOI);
        let mid_start = 2 + n_src + n_sem;
        for (i, &id) in mid_ids.iter().enumerate() {
            ids_per_pos[mid_start + i] = id;
        }
        ids_per_pos[layout.len() - 1] = self.special(EOI);

        let mut embs = vec![T::ZERO; layout.len() * w];
        let head_embs = self
            .backbone
            .emb
            .gather(&self.store, &[ids_per_pos[0], ids_per_pos[1]]);
        embs[..2 * w].copy_from_slice(&head_embs);
        embs[2 * w..(2 + n_src) * w].copy_from_slice(proj_source);
        if let Some(sem) = sem_source {
            embs[(2 + n_src) * w..(2 + n_src + n_sem) * w].copy_from_slice(sem);
        }
        let mid_embs = self.backbone.emb.gather(&self.store, &mid_ids);
        embs[mid_start * w..(mid_start + mid_ids.len()) * w].copy_from_slice(&mid_embs);

        let tgt_start = mid_start + mid_ids.len();
        let mask_embed = self.store.value(self.gen_mask_embed).to_vec();
        for p in 0..n {
            embs[(tgt_start + p) * w..(tgt_start + p + 1) * w].copy_from_slice(&mask_embed);
        }
        for (r, &p) in tgt_visible_positions.iter().enumerate() {
            embs[(tgt_start + p) * w..(tgt_start + p + 1) * w]
                .copy_from_slice(&proj_tgt_visible[r * w..(r + 1) * w]);
        }
        let eoi = self
            .backbone
            .emb
            .gather(&self.store, &[ids_per_pos[layout.len() - 1]]);
        let last = layout.len() - 1;
        embs[last * w..].copy_from_slice(&eoi);
        Ok((embs, layout, ids_per_pos))
    }

    // ----- shared backward helper --------------------------------------------

    /// Scatters embedding gradients back to token table, positional table and
    /// the per-segment producers. `gen_spans` lists (span_start, visible
    /// positions, d_proj rows out).
    fn scatter_emb_grads(
        &self,
        d_embs: &[T],
        ids_per_pos: &[usize],
        grads: &mut Grads<T>,
    ) {
        self.backbone.pos_grad(d_embs, grads);
        let w = self.cfg.lm.width;
        let ids: Vec<(usize, usize)> = ids_per_pos
            .iter()
            .enumerate()
            .filter(|(_, &id)| id != usize::MAX)
            .map(|(p, &id)| (p, id))
            .collect();
        let gathered_ids: Vec<usize> = ids.iter().map(|&(_, id)| id).collect();
        let mut d_rows = vec![T::ZERO; ids.len() * w];
        for (r, &(p, _)) in ids.iter().enumerate() {
            d_rows[r * w..(r + 1) * w].copy_from_slice(&d_embs[p * w..(p + 1) * w]);
        }
        self.backbone.emb.scatter_grad(&gathered_ids, &d_rows, grads);
    }

    // ----- understanding ------------------------------------------------------

    /// Forward + loss + full backward for one QA example. Answer ids must be
    /// non-empty or the EOS alone forms the target.
    pub fn loss_understanding(
        &self,
        image: &Image,
        question_ids: &[usize],
        answer_ids: &[usize],
        grads: Option<&mut Grads<T>>,
    ) -> Result<f64> {
        let w = self.cfg.lm.width;
        let (features, sem_cache) = self.sem.forward(&self.store, image)?;
        let (proj, proj_cache) = self.und_proj.forward(&self.store, &features);
        let (mut embs, layout, ids_per_pos) =
            self.assemble_understanding(&proj, question_ids, answer_ids)?;
        self.backbone.add_positions(&self.store, &mut embs);
        let mask = layout.attention_mask();
        let (hidden, bb_cache) = self.backbone.forward(&self.store, &embs, &mask);

        let loss_positions = layout.loss_positions();
        let predictors: Vec<usize> = loss_positions.iter().map(|&p| p - 1).collect();
        let targets: Vec<usize> = loss_positions.iter().map(|&p| ids_per_pos[p]).collect();
        let (logits, lcache) = self.backbone.logits_at(&self.store, &hidden, &predictors);
        let (loss, d_logits) =
            crate::backbone::understanding_loss(&logits, self.vocab.len(), &targets)?;

        if let Some(grads) = grads {
            let d_hidden =
                self.backbone
                    .logits_backward(&self.store, &lcache, &d_logits, layout.len(), grads);
            let d_embs = self.backbone.backward(&self.store, &bb_cache, &d_hidden, grads);
            self.scatter_emb_grads(&d_embs, &ids_per_pos, grads);
            // image span → projector → encoder
            let span = layout.span(1);
            let mut d_proj = vec![T::ZERO; (span.end - span.start) * w];
            for (r, p) in span.clone().enumerate() {
                d_proj[r * w..(r + 1) * w].copy_from_slice(&d_embs[p * w..(p + 1) * w]);
            }
            let d_features = self.und_proj.backward(&self.store, &proj_cache, &d_proj, grads);
            self.sem.backward(&self.store, &sem_cache, &d_features, grads);
        }
        Ok(loss.to_f64())
    }

    // ----- generation ---------------------------------------------------------

    /// Forward + diffusion loss + full backward for one captioned image.
    /// The mask plan and diffusion draws come from the caller's rng.
    pub fn loss_generation(
        &self,
        prompt_ids: &[usize],
        tokens: &TokenGrid<T>,
        plan: &MaskPlan,
        rng: &mut Rng,
        grads: Option<&mut Grads<T>>,
    ) -> Result<f64> {
        let w = self.cfg.lm.width;
        let wm = self.cfg.mar.width;
        let n = self.n_gen_tokens();
        if tokens.n_tokens() != n {
            return Err(Error::Config(format!(
                "token grid {} vs model grid {n}",
                tokens.n_tokens()
            )));
        }
        let visible = plan.visible_indices();
        let masked = plan.masked_indices();
        if masked.is_empty() {
            return Err(Error::Input("mask plan with no masked tokens".into()));
        }
        let vis_tokens: Vec<T> = visible
            .iter()
            .flat_map(|&p| tokens.token(p).iter().copied())
            .collect();
        let (enc_states, enc_cache) = self.mar.encode(&self.store, &vis_tokens, &visible)?;
        let (proj_vis, projv_cache) = if visible.is_empty() {
            (Vec::new(), None)
        } else {
            let (p, c) = self.gen_proj.forward(&self.store, &enc_states);
            (p, Some(c))
        };
        let (mut embs, layout, ids_per_pos) =
            self.assemble_generation(prompt_ids, &proj_vis, &visible)?;
        self.backbone.add_positions(&self.store, &mut embs);
        let mask = layout.attention_mask();
        let (hidden, bb_cache) = self.backbone.forward(&self.store, &embs, &mask);

        let span = layout.span(1);
        let mut cond_states = vec![T::ZERO; n * w];
        for (r, p) in span.clone().enumerate() {
            cond_states[r * w..(r + 1) * w].copy_from_slice(&hidden[p * w..(p + 1) * w]);
        }
        let (cond, cond_cache) = self.cond_map.forward(&self.store, &cond_states);
        let (z_all, dec_cache) = self.mar.decode(&self.store, &enc_states, &visible, &cond)?;

        let mut z_masked = vec![T::ZERO; masked.len() * wm];
        let mut x0_masked = vec![T::ZERO; masked.len() * tokens.dim];
        for (r, &p) in masked.iter().enumerate() {
            z_masked[r * wm..(r + 1) * wm].copy_from_slice(&z_all[p * wm..(p + 1) * wm]);
            x0_masked[r * tokens.dim..(r + 1) * tokens.dim].copy_from_slice(tokens.token(p));
        }
        let out: DiffusionLossOutput<T> =
            diffusion_loss(&self.head, &self.store, &self.schedule, &z_masked, &x0_masked, rng);

        if let Some(grads) = grads {
            let dz_masked = self.head.backward(&self.store, &out.cache, &out.d_eps_pred, grads);
            let mut dz_all = vec![T::ZERO; n * wm];
            for (r, &p) in masked.iter().enumerate() {
                dz_all[p * wm..(p + 1) * wm].copy_from_slice(&dz_masked[r * wm..(r + 1) * wm]);
            }
            let (d_enc_dec, d_cond) = self.mar.decode_backward(&self.store, &dec_cache, &dz_all, grads);
            let d_cond_states = self.cond_map.backward(&self.store, &cond_cache, &d_cond, grads);
            let mut d_hidden = vec![T::ZERO; layout.len() * w];
            for (r, p) in span.clone().enumerate() {
                d_hidden[p * w..(p + 1) * w].copy_from_slice(&d_cond_states[r * w..(r + 1) * w]);
            }
            let d_embs = self.backbone.backward(&self.store, &bb_cache, &d_hidden, grads);
            self.scatter_emb_grads(&d_embs, &ids_per_pos, grads);

            // gen span gradients: visible → projector, masked → placeholder
            let mut vis_set = vec![false; n];
            for &p in &visible {
                vis_set[p] = true;
            }
            let mut d_proj = vec![T::ZERO; visible.len() * w];
            for (r, &p) in visible.iter().enumerate() {
                let q = span.start + p;
                d_proj[r * w..(r + 1) * w].copy_from_slice(&d_embs[q * w..(q + 1) * w]);
            }
            {
                let g = grads.of_mut(self.gen_mask_embed);
                for p in 0..n {
                    if !vis_set[p] {
                        let q = span.start + p;
                        for i in 0..w {
                            g[i] += d_embs[q * w + i];
                        }
                    }
                }
            }
            let mut d_enc_total = d_enc_dec;
            if let Some(pc) = &projv_cache {
                let d_enc_proj = self.gen_proj.backward(&self.store, pc, &d_proj, grads);
                for (a, b) in d_enc_total.iter_mut().zip(&d_enc_proj) {
                    *a += *b;
                }
            }
            self.mar.encode_backward(&self.store, &enc_cache, &d_enc_total, grads);
        }
        Ok(out.loss.to_f64())
    }

    // ----- editing -------------------------------------------------------------

    /// Diffusion loss on target tokens conditioned on the fully visible
    /// source image and the instruction.
    pub fn loss_editing(
        &self,
        src_tokens: &TokenGrid<T>,
        instruction_ids: &[usize],
        tgt_tokens: &TokenGrid<T>,
        plan: &MaskPlan,
        src_image: Option<&Image>,
        rng: &mut Rng,
        grads: Option<&mut Grads<T>>,
    ) -> Result<f64> {
        let w = self.cfg.lm.width;
        let wm = self.cfg.mar.width;
        let n = self.n_gen_tokens();
        let visible = plan.visible_indices();
        let masked = plan.masked_indices();
        if masked.is_empty() {
            return Err(Error::Input("mask plan with no masked tokens".into()));
        }

        // source: fully visible
        let all_pos: Vec<usize> = (0..n).collect();
        let (src_enc, src_enc_cache) = self.mar.encode(&self.store, &src_tokens.tokens, &all_pos)?;
        let (proj_src, proj_src_cache) = self.gen_proj.forward(&self.store, &src_enc);

        // optional semantic source segment
        let sem_fwd = match (self.cfg.edit_source, src_image) {
            (EditSourceEncoding::MarPlusSemantic, Some(img)) => {
                let (f, sc) = self.sem.forward(&self.store, img)?;
                let (p, pc) = self.und_proj.forward(&self.store, &f);
                Some((p, pc, sc))
            }
            _ => None,
        };

        // target: visible subset
        let vis_tokens: Vec<T> = visible
            .iter()
            .flat_map(|&p| tgt_tokens.token(p).iter().copied())
            .collect();
        let (tgt_enc, tgt_enc_cache) = self.mar.encode(&self.store, &vis_tokens, &visible)?;
        let (proj_tgt, proj_tgt_cache) = if visible.is_empty() {
            (Vec::new(), None)
        } else {
            let (p, c) = self.gen_proj.forward(&self.store, &tgt_enc);
            (p, Some(c))
        };

        let (mut embs, layout, ids_per_pos) = self.assemble_editing(
            &proj_src,
            sem_fwd.as_ref().map(|(p, _, _)| p.as_slice()),
            instruction_ids,
            &proj_tgt,
            &visible,
        )?;
        self.backbone.add_positions(&self.store, &mut embs);
        let mask = layout.attention_mask();
        let (hidden, bb_cache) = self.backbone.forward(&self.store, &embs, &mask);

        // condition from the target span (the second gen segment)
        let tgt_seg = layout
            .find_segment(SegmentKind::GenImage, 1)
            .expect("editing layout has two gen segments");
        let span = layout.span(tgt_seg);
        let mut cond_states = vec![T::ZERO; n * w];
        for (r, p) in span.clone().enumerate() {
            cond_states[r * w..(r + 1) * w].copy_from_slice(&hidden[p * w..(p + 1) * w]);
        }
        let (cond, cond_cache) = self.cond_map.forward(&self.store, &cond_states);
        let (z_all, dec_cache) = self.mar.decode(&self.store, &tgt_enc, &visible, &cond)?;

        let mut z_masked = vec![T::ZERO; masked.len() * wm];
        let mut x0_masked = vec![T::ZERO; masked.len() * tgt_tokens.dim];
        for (r, &p) in masked.iter().enumerate() {
            z_masked[r * wm..(r + 1) * wm].copy_from_slice(&z_all[p * wm..(p + 1) * wm]);
            x0_masked[r * tgt_tokens.dim..(r + 1) * tgt_tokens.dim]
                .copy_from_slice(tgt_tokens.token(p));
        }
        let out = diffusion_loss(&self.head, &self.store, &self.schedule, &z_masked, &x0_masked, rng);

        if let Some(grads) = grads {
            let dz_masked = self.head.backward(&self.store, &out.cache, &out.d_eps_pred, grads);
            let mut dz_all = vec![T::ZERO; n * wm];
            for (r, &p) in masked.iter().enumerate() {
                dz_all[p * wm..(p + 1) * wm].copy_from_slice(&dz_masked[r * wm..(r + 1) * wm]);
            }
            let (d_tgt_enc_dec, d_cond) =
                self.mar.decode_backward(&self.store, &dec_cache, &dz_all, grads);
            let d_cond_states = self.cond_map.backward(&self.store, &cond_cache, &d_cond, grads);
            let mut d_hidden = vec![T::ZERO; layout.len() * w];
            for (r, p) in span.clone().enumerate() {
                d_hidden[p * w..(p + 1) * w].copy_from_slice(&d_cond_states[r * w..(r + 1) * w]);
            }
            let d_embs = self.backbone.backward(&self.store, &bb_cache, &d_hidden, grads);
            self.scatter_emb_grads(&d_embs, &ids_per_pos, grads);

            // source span
            let src_span = layout.span(1);
            let mut d_proj_src = vec![T::ZERO; n * w];
            for (r, p) in src_span.clone().enumerate() {
                d_proj_src[r * w..(r + 1) * w].copy_from_slice(&d_embs[p * w..(p + 1) * w]);
            }
            let d_src_enc = self.gen_proj.backward(&self.store, &proj_src_cache, &d_proj_src, grads);
            self.mar.encode_backward(&self.store, &src_enc_cache, &d_src_enc, grads);

            // optional semantic segment
            if let Some((proj, pc, sc)) = &sem_fwd {
                let sem_seg = layout
                    .find_segment(SegmentKind::UndImage, 0)
                    .expect("semantic segment present");
                let sspan = layout.span(sem_seg);
                let mut d_p = vec![T::ZERO; proj.len()];
                for (r, p) in sspan.clone().enumerate() {
                    d_p[r * w..(r + 1) * w].copy_from_slice(&d_embs[p * w..(p + 1) * w]);
                }
                let d_f = self.und_proj.backward(&self.store, pc, &d_p, grads);
                self.sem.backward(&self.store, sc, &d_f, grads);
            }

            // target span: visible → projector, masked → placeholder
            let mut vis_set = vec![false; n];
            for &p in &visible {
                vis_set[p] = true;
            }
            let mut d_proj_tgt = vec![T::ZERO; visible.len() * w];
            for (r, &p) in visible.iter().enumerate() {
                let q = span.start + p;
                d_proj_tgt[r * w..(r + 1) * w].copy_from_slice(&d_embs[q * w..(q + 1) * w]);
            }
            {
                let g = grads.of_mut(self.gen_mask_embed);
                for p in 0..n {
                    if !vis_set[p] {
                        let q = span.start + p;
                        for i in 0..w {
                            g[i] += d_embs[q * w + i];
                        }
                    }
                }
            }
            let mut d_tgt_enc = d_tgt_enc_dec;
            if let Some(pc) = &proj_tgt_cache {
                let d_enc_proj = self.gen_proj.backward(&self.store, pc, &d_proj_tgt, grads);
                for (a, b) in d_tgt_enc.iter_mut().zip(&d_enc_proj) {
                    *a += *b;
                }
            }
            self.mar.encode_backward(&self.store, &tgt_enc_cache, &d_tgt_enc, grads);
        }
        Ok(out.loss.to_f64())
    }

    // ----- sampling ------------------------------------------------------------

    /// Condition vectors (post cond_map) for generation, conditional and
    /// unconditional branches.
    fn gen_condition(
        &self,
        prompt_ids: &[usize],
        visible: &[usize],
        vis_tokens: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let w = self.cfg.lm.width;
        let n = self.n_gen_tokens();
        let (enc_states, _) = self.mar.encode(&self.store, vis_tokens, visible)?;
        let proj_vis = if visible.is_empty() {
            Vec::new()
        } else {
            self.gen_proj.forward(&self.store, &enc_states).0
        };
        let null = [self.special(NULL_PROMPT)];
        let mut out = Vec::new();
        for ids in [prompt_ids, &null[..]] {
            let (mut embs, layout, _) = self.assemble_generation(ids, &proj_vis, visible)?;
            self.backbone.add_positions(&self.store, &mut embs);
            let mask = layout.attention_mask();
            let (hidden, _) = self.backbone.forward(&self.store, &embs, &mask);
            let span = layout.span(1);
            let mut cond_states = vec![T::ZERO; n * w];
            for (r, p) in span.enumerate() {
                cond_states[r * w..(r + 1) * w].copy_from_slice(&hidden[p * w..(p + 1) * w]);
            }
            let (cond, _) = self.cond_map.forward(&self.store, &cond_states);
            let (z_all, _) = self.mar.decode(&self.store, &enc_states, visible, &cond)?;
            out.push(z_all);
        }
        let zu = out.pop().unwrap();
        let zc = out.pop().unwrap();
        Ok((zc, zu))
    }

    /// Condition vectors for editing; the unconditional branch replaces the
    /// instruction with the null prompt.
    fn edit_condition(
        &self,
        src_tokens: &TokenGrid<T>,
        instruction_ids: &[usize],
        visible: &[usize],
        vis_tokens: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let w = self.cfg.lm.width;
        let n = self.n_gen_tokens();
        let all_pos: Vec<usize> = (0..n).collect();
        let (src_enc, _) = self.mar.encode(&self.store, &src_tokens.tokens, &all_pos)?;
        let (proj_src, _) = self.gen_proj.forward(&self.store, &src_enc);
        let (tgt_enc, _) = self.mar.encode(&self.store, vis_tokens, visible)?;
        let proj_tgt = if visible.is_empty() {
            Vec::new()
        } else {
            self.gen_proj.forward(&self.store, &tgt_enc).0
        };
        let null = [self.special(NULL_PROMPT)];
        let mut out = Vec::new();
        for ids in [instruction_ids, &null[..]] {
            let (mut embs, layout, _) =
                self.assemble_editing(&proj_src, None, ids, &proj_tgt, visible)?;
            self.backbone.add_positions(&self.store, &mut embs);
            let mask = layout.attention_mask();
            let (hidden, _) = self.backbone.forward(&self.store, &embs, &mask);
            let tgt_seg = layout.find_segment(SegmentKind::GenImage, 1).unwrap();
            let span = layout.span(tgt_seg);
            let mut cond_states = vec![T::ZERO; n * w];
            for (r, p) in span.enumerate() {
                cond_states[r * w..(r + 1) * w].copy_from_slice(&hidden[p * w..(p + 1) * w]);
            }
            let (cond, _) = self.cond_map.forward(&self.store, &cond_states);
            let (z_all, _) = self.mar.decode(&self.store, &tgt_enc, visible, &cond)?;
            out.push(z_all);
        }
        let zu = out.pop().unwrap();
        let zc = out.pop().unwrap();
        Ok((zc, zu))
    }

    /// Iterative masked-autoregressive sampling: at each outer step the
    /// cosine schedule fixes how many tokens commit; the masked positions
    /// with the smallest guided-noise magnitude (probed at t = T) commit
    /// first, ties broken by raster index. Every token commits exactly once.
    pub fn generate(
        &self,
        prompt_ids: &[usize],
        steps: usize,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<TokenGrid<T>> {
        self.sample_loop(steps, cfg_scale, seed, |visible, vis_tokens| {
            self.gen_condition(prompt_ids, visible, vis_tokens)
        })
    }

    pub fn generate_edit(
        &self,
        src_tokens: &TokenGrid<T>,
        instruction_ids: &[usize],
        steps: usize,
        cfg_scale: f64,
        seed: u64,
    ) -> Result<TokenGrid<T>> {
        self.sample_loop(steps, cfg_scale, seed, |visible, vis_tokens| {
            self.edit_condition(src_tokens, instruction_ids, visible, vis_tokens)
        })
    }

    fn sample_loop(
        &self,
        steps: usize,
        cfg_scale: f64,
        seed: u64,
        condition: impl Fn(&[usize], &[T]) -> Result<(Vec<T>, Vec<T>)>,
    ) -> Result<TokenGrid<T>> {
        let n = self.n_gen_tokens();
        let dim = self.cfg.mar.token_dim;
        let wm = self.cfg.mar.width;
        let counts = commit_counts(n, steps);
        let mut committed: Vec<Option<Vec<T>>> = vec![None; n];
        let probe = vec![T::ZERO; dim];
        for (k, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let visible: Vec<usize> = (0..n).filter(|&p| committed[p].is_some()).collect();
            let vis_tokens: Vec<T> = visible
                .iter()
                .flat_map(|&p| committed[p].as_ref().unwrap().iter().copied())
                .collect();
            let (zc, zu) = condition(&visible, &vis_tokens)
                .map_err(|e| Error::Config(format!("condition provider failed at step {}: {e}", k + 1)))?;
            // rank masked positions by guided-noise magnitude at the probe
            let masked: Vec<usize> = (0..n).filter(|&p| committed[p].is_none()).collect();
            let mut ranked: Vec<(f64, usize)> = masked
                .iter()
                .map(|&p| {
                    let zc_row = &zc[p * wm..(p + 1) * wm];
                    let zu_row = &zu[p * wm..(p + 1) * wm];
                    let (ec, _) =
                        self.head
                            .forward(&self.store, &probe, &[self.schedule.timesteps], zc_row);
                    let (eu, _) =
                        self.head
                            .forward(&self.store, &probe, &[self.schedule.timesteps], zu_row);
                    let eg = cfg_combine(&ec, &eu, cfg_scale).expect("same shape");
                    (l2_norm(&eg), p)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, p) in ranked.iter().take(count) {
                let mut rng = Rng::derived(seed, &[tag::SAMPLER, p as u64]);
                let zc_row = &zc[p * wm..(p + 1) * wm];
                let zu_row = &zu[p * wm..(p + 1) * wm];
                let token = denoise_sample(
                    &self.head,
                    &self.store,
                    &self.schedule,
                    zc_row,
                    Some(zu_row),
                    cfg_scale,
                    &mut rng,
                );
                committed[p] = Some(token);
            }
        }
        let mut tokens = Vec::with_capacity(n * dim);
        for p in 0..n {
            tokens.extend_from_slice(committed[p].as_ref().expect("all tokens committed"));
        }
        Ok(TokenGrid {
            side: (n as f64).sqrt() as usize,
            dim,
            tokens,
        })
    }

    /// Greedy answer decoding for a question about an image.
    pub fn answer_question(&self, image: &Image, question: &str, max_new: usize) -> Result<String> {
        let question_ids = self.vocab.tokenize(question)?;
        let eos = self.special(EOS);
        let (features, _) = self.sem.forward(&self.store, image)?;
        let (proj, _) = self.und_proj.forward(&self.store, &features);
        let mut answer_ids: Vec<usize> = Vec::new();
        for _ in 0..max_new {
            let (mut embs, layout, _) =
                self.assemble_understanding(&proj, &question_ids, &answer_ids)?;
            self.backbone.add_positions(&self.store, &mut embs);
            let mask = layout.attention_mask();
            let (hidden, _) = self.backbone.forward(&self.store, &embs, &mask);
            // predict the token after the last committed position (the
            // position before EOS)
            let predictor = layout.len() - 2;
            let (logits, _) = self.backbone.logits_at(&self.store, &hidden, &[predictor]);
            let next = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if next == eos {
                break;
            }
            answer_ids.push(next);
        }
        Ok(self.vocab.detokenize(&answer_ids))
    }

    /// Renders a token grid into an image through the codec.
    pub fn decode_image(&self, codec: &Codec<T>, tokens: &TokenGrid<T>) -> Result<Image> {
        codec.image_from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::sample_mask;
    use crate::scene::{render, sample_scene, Category};

    fn tiny_model() -> UnifiedModel<f64> {
        UnifiedModel::new(ModelConfig::tiny(), 42).unwrap()
    }

    #[test]
    fn understanding_layout_arithmetic() {
        let m = tiny_model();
        let w = m.cfg.lm.width;
        let und = vec![0.0; 16 * w];
        let q = vec![7usize; 5];
        let a = vec![8usize; 1];
        let (_, layout, _) = m.assemble_understanding(&und, &q, &a).unwrap();
        assert_eq!(layout.len(), 16 + 5 + 1 + 3);
        assert_eq!(layout.loss_positions().len(), 2);
        // loss mask false on every image position
        for p in layout.span(1) {
            assert!(!layout.loss_mask[p]);
        }
        // empty answer → only EOS carries loss
        let (_, l2, _) = m.assemble_understanding(&und, &q, &[]).unwrap();
        assert_eq!(l2.loss_positions().len(), 1);
    }

    #[test]
    fn generation_layout_and_null_prompt() {
        let m = tiny_model();
        let n = m.n_gen_tokens();
        let (_, layout, _) = m.assemble_generation(&[10, 11], &[], &[]).unwrap();
        // BOS + 2 prompt + BOI + n + EOI
        assert_eq!(layout.len(), 4 + n + 1);
        let null = [m.vocab.id(NULL_PROMPT).unwrap()];
        let (_, l2, _) = m.assemble_generation(&null, &[], &[]).unwrap();
        assert_eq!(l2.len(), 3 + n + 1);
    }

    #[test]
    fn prompt_perturbation_changes_condition_states() {
        let m = tiny_model();
        let (zc1, _) = m.gen_condition(&[10, 11], &[], &[]).unwrap();
        let (zc2, _) = m.gen_condition(&[10, 12], &[], &[]).unwrap();
        assert_ne!(zc1, zc2);
        // unconditional branch identical across prompts
        let (_, zu1) = m.gen_condition(&[10, 11], &[], &[]).unwrap();
        let (_, zu2) = m.gen_condition(&[10, 12], &[], &[]).unwrap();
        assert_eq!(zu1, zu2);
    }

    #[test]
    fn editing_source_sensitivity() {
        let m = tiny_model();
        let n = m.n_gen_tokens();
        let dim = m.cfg.mar.token_dim;
        let mut rng = Rng::new(3);
        let src = TokenGrid {
            side: (n as f64).sqrt() as usize,
            dim,
            tokens: rng.normal_vec(n * dim),
        };
        let zeroed = TokenGrid {
            side: src.side,
            dim,
            tokens: vec![0.0; n * dim],
        };
        let (zc1, _) = m.edit_condition(&src, &[10], &[], &[]).unwrap();
        let (zc2, _) = m.edit_condition(&zeroed, &[10], &[], &[]).unwrap();
        assert_ne!(zc1, zc2);
    }

    #[test]
    fn generation_loss_runs_and_sampling_is_deterministic() {
        let m = tiny_model();
        let codec: Codec<f64> = Codec::new(m.cfg.codec.clone());
        let spec = sample_scene(&mut Rng::new(5), Category::SingleObject, m.cfg.gen_side);
        let img = render(&spec);
        let tokens = codec.tokens_from_image(&img).unwrap();
        let plan = sample_mask(m.n_gen_tokens(), 0.8, &mut Rng::new(6));
        let mut rng = Rng::new(7);
        let loss = m
            .loss_generation(&[10, 11], &tokens, &plan, &mut rng, None)
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0);

        let a = m.generate(&[10, 11], 4, 3.0, 99).unwrap();
        let b = m.generate(&[10, 11], 4, 3.0, 99).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.n_tokens(), m.n_gen_tokens());
    }

    #[test]
    fn understanding_loss_runs() {
        let m = tiny_model();
        let spec = sample_scene(&mut Rng::new(8), Category::Colors, m.cfg.und_side);
        let img = render(&spec);
        let q = m.vocab.tokenize("what color is the circle").unwrap();
        let a = m.vocab.tokenize("red").unwrap();
        let mut grads = m.store.grads();
        let loss = m
            .loss_understanding(&img, &q, &a, Some(&mut grads))
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }

    /// Finite differences through the complete generation pipeline
    /// (encoder → projector → backbone → condition map → decoder → head) and
    /// the complete understanding pipeline, sampling coordinates from every
    /// parameter group.
    #[test]
    fn full_stack_gradients_match_finite_differences() {
        let mut m: UnifiedModel<f64> = UnifiedModel::new(ModelConfig::toy(), 7).unwrap();
        let codec: Codec<f64> = Codec::new(m.cfg.codec.clone());

        let gen_spec = sample_scene(&mut Rng::new(1), Category::SingleObject, m.cfg.gen_side);
        let gen_tokens = codec.tokens_from_image(&render(&gen_spec)).unwrap();
        let plan = sample_mask(m.n_gen_tokens(), 0.75, &mut Rng::new(2));
        let prompt = m.vocab.tokenize("a photo of a red circle").unwrap();

        let und_spec = sample_scene(&mut Rng::new(3), Category::Colors, m.cfg.und_side);
        let und_img = render(&und_spec);
        let q = m.vocab.tokenize("what color is the circle").unwrap();
        let ans = m.vocab.tokenize(und_spec.objects[0].color.word()).unwrap();

        let mut grads = m.store.grads();
        {
            let mut rng = Rng::new(55);
            m.loss_generation(&prompt, &gen_tokens, &plan, &mut rng, Some(&mut grads))
                .unwrap();
            m.loss_understanding(&und_img, &q, &ans, Some(&mut grads))
                .unwrap();
        }

        let loss_of = |m: &UnifiedModel<f64>| -> f64 {
            let mut rng = Rng::new(55);
            let lg = m
                .loss_generation(&prompt, &gen_tokens, &plan, &mut rng, None)
                .unwrap();
            let lu = m.loss_understanding(&und_img, &q, &ans, None).unwrap();
            lg + lu
        };

        let ids: Vec<ParamId> = m.store.ids().collect();
        let mut crng = Rng::new(99);
        let mut max_rel = 0.0f64;
        let mut worst = String::new();
        let mut checked = 0;
        let h = 1e-5;
        for &id in &ids {
            let n = m.store.value(id).len();
            let coords = if n <= 4 { (0..n).collect() } else { crng.choose_k(n, 4) };
            for c in coords {
                let orig = m.store.value(id)[c];
                m.store.value_mut(id)[c] = orig + h;
                let lp = loss_of(&m);
                m.store.value_mut(id)[c] = orig - h;
                let lm = loss_of(&m);
                m.store.value_mut(id)[c] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.of(id)[c];
                checked += 1;
                if an.abs() < 1e-10 && fd.abs() < 1e-10 {
                    continue;
                }
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-6);
                if rel > max_rel {
                    max_rel = rel;
                    worst = format!("{}[{c}]: analytic {an} fd {fd}", m.store.name(id));
                }
            }
        }
        assert!(
            max_rel < 1e-3,
            "max rel err {max_rel} at {worst} over {checked} coords"
        );
    }
}
