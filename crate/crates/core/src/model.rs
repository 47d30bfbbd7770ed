//! The general block-term scoring form: a shared `P x P x P` core tensor
//! contracted with partitioned embedding rows.
//!
//! A triplet `(i, j, k)` scores as
//!
//! ```text
//! X[i,j,k] = sum_d sum_{l,m,n} W[l,m,n] * H[i,d,l] * R[j,d,m] * T[k,d,n]
//! ```
//!
//! where each embedding row of total dimension `D` is reshaped into
//! `D/P` blocks of length `P`. Fixed sign-pattern cores reproduce CP,
//! DistMult, ComplEx, SimplE, ANALOGY and QuatE; a trainable core with
//! `P = D` is TuckER.

use crate::tensor::{DenseMatrix, DenseTensor3, Mode};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Standard deviation of the Gaussian embedding initialization.
pub const INIT_EMBED_STD: f64 = 1e-3;

/// The named model families expressible in the general form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Cp,
    DistMult,
    Complex,
    Simple,
    Analogy,
    Quate,
    Tucker,
}

impl PresetKind {
    pub const ALL: [PresetKind; 7] = [
        PresetKind::Cp,
        PresetKind::DistMult,
        PresetKind::Complex,
        PresetKind::Simple,
        PresetKind::Analogy,
        PresetKind::Quate,
        PresetKind::Tucker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Cp => "cp",
            PresetKind::DistMult => "distmult",
            PresetKind::Complex => "complex",
            PresetKind::Simple => "simple",
            PresetKind::Analogy => "analogy",
            PresetKind::Quate => "quate",
            PresetKind::Tucker => "tucker",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(PresetKind::Cp),
            "distmult" => Ok(PresetKind::DistMult),
            "complex" => Ok(PresetKind::Complex),
            "simple" => Ok(PresetKind::Simple),
            "analogy" => Ok(PresetKind::Analogy),
            "quate" => Ok(PresetKind::Quate),
            "tucker" => Ok(PresetKind::Tucker),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// Number of parts each embedding row is split into. TuckER uses the
    /// full dimension unless a smaller trainable core is requested.
    pub fn default_parts(self, dim: usize) -> usize {
        match self {
            PresetKind::Cp | PresetKind::DistMult => 1,
            PresetKind::Complex | PresetKind::Simple => 2,
            PresetKind::Analogy | PresetKind::Quate => 4,
            PresetKind::Tucker => dim,
        }
    }

    /// Every family except CP shares head and tail embeddings.
    pub fn default_tied(self) -> bool {
        !matches!(self, PresetKind::Cp)
    }

    /// Nonzero core entries `(l, m, n, sign)` for the constant-core presets,
    /// zero-indexed; `None` for the trainable TuckER core.
    pub fn core_entries(self) -> Option<&'static [(usize, usize, usize, f64)]> {
        match self {
            PresetKind::Cp | PresetKind::DistMult => Some(&[(0, 0, 0, 1.0)]),
            PresetKind::Complex => Some(&[
                (0, 0, 0, 1.0),
                (1, 0, 1, 1.0),
                (0, 1, 1, 1.0),
                (1, 1, 0, -1.0),
            ]),
            PresetKind::Simple => Some(&[(0, 0, 1, 1.0), (1, 1, 0, 1.0)]),
            PresetKind::Analogy => Some(&[
                (0, 0, 0, 1.0),
                (1, 1, 1, 1.0),
                (2, 2, 2, 1.0),
                (2, 3, 3, 1.0),
                (3, 2, 3, 1.0),
                (3, 3, 2, -1.0),
            ]),
            PresetKind::Quate => Some(&[
                (0, 0, 0, 1.0),
                (1, 1, 0, -1.0),
                (2, 2, 0, -1.0),
                (3, 3, 0, -1.0),
                (0, 1, 1, 1.0),
                (1, 0, 1, 1.0),
                (2, 3, 1, 1.0),
                (3, 2, 1, -1.0),
                (0, 2, 2, 1.0),
                (1, 3, 2, -1.0),
                (2, 0, 2, 1.0),
                (3, 1, 2, 1.0),
                (0, 3, 3, 1.0),
                (1, 2, 3, 1.0),
                (2, 1, 3, -1.0),
                (3, 0, 3, 1.0),
            ]),
            PresetKind::Tucker => None,
        }
    }
}

/// A preset resolved against a concrete embedding dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelPreset {
    pub kind: PresetKind,
    pub parts: usize,
    pub tied: bool,
}

impl ModelPreset {
    pub fn new(kind: PresetKind, dim: usize) -> Self {
        Self {
            kind,
            parts: kind.default_parts(dim),
            tied: kind.default_tied(),
        }
    }

    /// TuckER-style preset with a trainable core smaller than `D`
    /// (block-term generalization).
    pub fn tucker_with_parts(parts: usize) -> Self {
        Self {
            kind: PresetKind::Tucker,
            parts,
            tied: true,
        }
    }
}

/// The `P x P x P` coefficient tensor of the general form.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreTensor {
    parts: usize,
    values: DenseTensor3,
    trainable: bool,
}

impl CoreTensor {
    pub fn new(values: DenseTensor3, trainable: bool) -> Result<Self> {
        let (a, b, c) = values.shape();
        if a != b || b != c {
            return Err(Error::ShapeMismatch {
                op: "CoreTensor::new",
                detail: format!("core must be cubic, got {a}x{b}x{c}"),
            });
        }
        Ok(Self {
            parts: a,
            values,
            trainable,
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn values(&self) -> &DenseTensor3 {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseTensor3 {
        &mut self.values
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize, n: usize) -> f64 {
        self.values.get(l, m, n)
    }
}

/// Builds the core tensor for a preset. Constant presets return their sign
/// pattern; TuckER returns a zero trainable core of shape `parts^3`, filled
/// in by model initialization.
pub fn build_preset_core(preset: &ModelPreset, dim: usize) -> Result<CoreTensor> {
    if preset.parts == 0 {
        return Err(Error::InvalidConfig("parts must be positive".into()));
    }
    if dim == 0 || dim % preset.parts != 0 {
        return Err(Error::InvalidConfig(format!(
            "dimension {dim} is not divisible by parts {}",
            preset.parts
        )));
    }
    match preset.kind.core_entries() {
        Some(entries) => {
            let p = preset.kind.default_parts(dim);
            if preset.parts != p {
                return Err(Error::InvalidConfig(format!(
                    "preset {} requires parts {p}, got {}",
                    preset.kind.name(),
                    preset.parts
                )));
            }
            let mut w = DenseTensor3::zeros((p, p, p));
            for &(l, m, n, sign) in entries {
                w.set(l, m, n, sign);
            }
            CoreTensor::new(w, false)
        }
        None => CoreTensor::new(
            DenseTensor3::zeros((preset.parts, preset.parts, preset.parts)),
            true,
        ),
    }
}

/// An embedding table of shape `count x blocks x parts`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    count: usize,
    blocks: usize,
    parts: usize,
    values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(count: usize, blocks: usize, parts: usize) -> Self {
        Self {
            count,
            blocks,
            parts,
            values: vec![0.0; count * blocks * parts],
        }
    }

    pub fn from_values(
        count: usize,
        blocks: usize,
        parts: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != count * blocks * parts {
            return Err(Error::ShapeMismatch {
                op: "EmbeddingTable::from_values",
                detail: format!("{} values for {count}x{blocks}x{parts}", values.len()),
            });
        }
        Ok(Self {
            count,
            blocks,
            parts,
            values,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    /// Total embedding dimension `D = blocks * parts`.
    pub fn dim(&self) -> usize {
        self.blocks * self.parts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    fn offset(&self, id: usize, block: usize) -> usize {
        (id * self.blocks + block) * self.parts
    }

    /// Length-`P` row for one id and block.
    #[inline]
    pub fn row(&self, id: usize, block: usize) -> &[f64] {
        let o = self.offset(id, block);
        &self.values[o..o + self.parts]
    }

    #[inline]
    pub fn row_mut(&mut self, id: usize, block: usize) -> &mut [f64] {
        let o = self.offset(id, block);
        &mut self.values[o..o + self.parts]
    }

    /// Full length-`D` row for one id (all blocks).
    pub fn full_row(&self, id: usize) -> &[f64] {
        let o = id * self.blocks * self.parts;
        &self.values[o..o + self.blocks * self.parts]
    }

    /// The `count x parts` slice fixing one block.
    pub fn slice(&self, block: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.count, self.parts);
        for id in 0..self.count {
            let row = self.row(id, block);
            m.values_mut()[id * self.parts..(id + 1) * self.parts].copy_from_slice(row);
        }
        m
    }
}

/// A scoring model: head/relation/tail embedding tables plus a core tensor.
/// When tied, head and tail share storage and every update to one is visible
/// through the other.
#[derive(Clone, Debug)]
pub struct TdbModel {
    kind: PresetKind,
    head: EmbeddingTable,
    rel: EmbeddingTable,
    tail: Option<EmbeddingTable>,
    core: CoreTensor,
}

/// Identifies one parameter array of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamId {
    Head,
    Rel,
    /// Present only on untied models.
    Tail,
    /// Present only when the core is trainable.
    Core,
}

impl TdbModel {
    pub fn from_parts(
        kind: PresetKind,
        head: EmbeddingTable,
        rel: EmbeddingTable,
        tail: Option<EmbeddingTable>,
        core: CoreTensor,
    ) -> Result<Self> {
        let p = core.parts();
        let tables = [
            ("head", Some(&head)),
            ("rel", Some(&rel)),
            ("tail", tail.as_ref()),
        ];
        for (name, t) in tables {
            let Some(t) = t else { continue };
            if t.parts() != p {
                return Err(Error::ShapeMismatch {
                    op: "TdbModel::from_parts",
                    detail: format!("{name} table has parts {} but core has {p}", t.parts()),
                });
            }
            if t.blocks() != head.blocks() {
                return Err(Error::ShapeMismatch {
                    op: "TdbModel::from_parts",
                    detail: format!(
                        "{name} table has blocks {} but head has {}",
                        t.blocks(),
                        head.blocks()
                    ),
                });
            }
        }
        Ok(Self {
            kind,
            head,
            rel,
            tail,
            core,
        })
    }

    /// Zero-initialized model for a preset over a vocabulary.
    pub fn new_zero(
        preset: &ModelPreset,
        entities: usize,
        relations: usize,
        dim: usize,
    ) -> Result<Self> {
        let core = build_preset_core(preset, dim)?;
        let blocks = dim / preset.parts;
        let head = EmbeddingTable::zeros(entities, blocks, preset.parts);
        let rel = EmbeddingTable::zeros(relations, blocks, preset.parts);
        let tail = if preset.tied {
            None
        } else {
            Some(EmbeddingTable::zeros(entities, blocks, preset.parts))
        };
        Self::from_parts(preset.kind, head, rel, tail, core)
    }

    /// Gaussian-initialized embeddings (std 1e-3); a trainable core is drawn
    /// uniformly from [-1, 1].
    pub fn new_random<R: Rng>(
        preset: &ModelPreset,
        entities: usize,
        relations: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::new_zero(preset, entities, relations, dim)?;
        let normal = Normal::new(0.0, INIT_EMBED_STD).expect("valid std");
        for v in model.head.values_mut() {
            *v = normal.sample(rng);
        }
        for v in model.rel.values_mut() {
            *v = normal.sample(rng);
        }
        if let Some(tail) = model.tail.as_mut() {
            for v in tail.values_mut() {
                *v = normal.sample(rng);
            }
        }
        if model.core.trainable() {
            let uniform = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            for v in model.core.values_mut().values_mut() {
                *v = uniform.sample(rng);
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> PresetKind {
        self.kind
    }

    pub fn head(&self) -> &EmbeddingTable {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.head
    }

    pub fn rel(&self) -> &EmbeddingTable {
        &self.rel
    }

    pub fn rel_mut(&mut self) -> &mut EmbeddingTable {
        &mut self.rel
    }

    /// Tail table; resolves to head storage on tied models.
    pub fn tail(&self) -> &EmbeddingTable {
        self.tail.as_ref().unwrap_or(&self.head)
    }

    pub fn tied(&self) -> bool {
        self.tail.is_none()
    }

    pub fn core(&self) -> &CoreTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut CoreTensor {
        &mut self.core
    }

    pub fn parts(&self) -> usize {
        self.core.parts()
    }

    pub fn blocks(&self) -> usize {
        self.head.blocks()
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn n_entities(&self) -> usize {
        self.head.count()
    }

    pub fn n_relations(&self) -> usize {
        self.rel.count()
    }

    /// Parameter arrays present on this model, in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::Head, ParamId::Rel];
        if self.tail.is_some() {
            ids.push(ParamId::Tail);
        }
        if self.core.trainable() {
            ids.push(ParamId::Core);
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Head => self.head.values(),
            ParamId::Rel => self.rel.values(),
            ParamId::Tail => self.tail.as_ref().expect("untied model").values(),
            ParamId::Core => self.core.values().values(),
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Head => self.head.values_mut(),
            ParamId::Rel => self.rel.values_mut(),
            ParamId::Tail => self.tail.as_mut().expect("untied model").values_mut(),
            ParamId::Core => self.core.values_mut().values_mut(),
        }
    }

    /// Number of parameters: core (when trainable) plus embedding tables,
    /// counting tied head/tail once.
    pub fn param_count(&self) -> usize {
        let core = if self.core.trainable() {
            self.parts().pow(3)
        } else {
            0
        };
        let ent_tables = if self.tied() { 1 } else { 2 };
        core + ent_tables * self.n_entities() * self.dim() + self.n_relations() * self.dim()
    }

    fn check_ids(&self, i: usize, j: usize, k: usize) -> Result<()> {
        if i >= self.n_entities() {
            return Err(Error::IdOutOfRange {
                role: "head entity",
                id: i,
                count: self.n_entities(),
            });
        }
        if j >= self.n_relations() {
            return Err(Error::IdOutOfRange {
                role: "relation",
                id: j,
                count: self.n_relations(),
            });
        }
        if k >= self.tail().count() {
            return Err(Error::IdOutOfRange {
                role: "tail entity",
                id: k,
                count: self.tail().count(),
            });
        }
        Ok(())
    }

    /// Score of a single triplet.
    pub fn score_triplet(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        self.check_ids(i, j, k)?;
        let p = self.parts();
        let w = self.core.values().values();
        let mut score = 0.0;
        let mut v = vec![0.0; p];
        for d in 0..self.blocks() {
            let h = self.head.row(i, d);
            let r = self.rel.row(j, d);
            core_hr_contract(w, p, h, r, &mut v);
            score += dot(&v, self.tail().row(k, d));
        }
        Ok(score)
    }

    /// Scores of `(i, j, k)` for every tail `k`, sharing the per-block core
    /// contraction across tails.
    pub fn score_all_tails(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        if i >= self.n_entities() {
            return Err(Error::IdOutOfRange {
                role: "head entity",
                id: i,
                count: self.n_entities(),
            });
        }
        if j >= self.n_relations() {
            return Err(Error::IdOutOfRange {
                role: "relation",
                id: j,
                count: self.n_relations(),
            });
        }
        let p = self.parts();
        let w = self.core.values().values();
        let tail = self.tail();
        let mut scores = vec![0.0; tail.count()];
        let mut v = vec![0.0; p];
        for d in 0..self.blocks() {
            let h = self.head.row(i, d);
            let r = self.rel.row(j, d);
            core_hr_contract(w, p, h, r, &mut v);
            for (k, s) in scores.iter_mut().enumerate() {
                *s += dot(&v, tail.row(k, d));
            }
        }
        Ok(scores)
    }

    /// Materializes the full score tensor (entities x relations x tails) as a
    /// sum of per-block Tucker products. Refuses when the tensor would exceed
    /// `max_cells`.
    pub fn materialize(&self, max_cells: usize) -> Result<DenseTensor3> {
        let required = self
            .n_entities()
            .checked_mul(self.n_relations())
            .and_then(|x| x.checked_mul(self.tail().count()))
            .ok_or(Error::BudgetExceeded {
                required: usize::MAX,
                budget: max_cells,
            })?;
        if required > max_cells {
            return Err(Error::BudgetExceeded {
                required,
                budget: max_cells,
            });
        }
        let mut x = DenseTensor3::zeros((
            self.n_entities(),
            self.n_relations(),
            self.tail().count(),
        ));
        for d in 0..self.blocks() {
            let term = self
                .core
                .values()
                .mode_product(&self.head.slice(d), Mode::One)?
                .mode_product(&self.rel.slice(d), Mode::Two)?
                .mode_product(&self.tail().slice(d), Mode::Three)?;
            x.add_assign(&term)?;
        }
        Ok(x)
    }
}

/// `v[n] = sum_{l,m} w[l,m,n] h[l] r[m]`, the per-block contraction shared by
/// triplet scoring and all-tails scoring.
#[inline]
pub(crate) fn core_hr_contract(w: &[f64], p: usize, h: &[f64], r: &[f64], v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = 0.0);
    for (l, &hl) in h.iter().enumerate() {
        if hl == 0.0 {
            continue;
        }
        for (m, &rm) in r.iter().enumerate() {
            let c = hl * rm;
            if c == 0.0 {
                continue;
            }
            let base = (l * p + m) * p;
            for (n, vn) in v.iter_mut().enumerate() {
                *vn += c * w[base + n];
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub mod checkpoint {
    //! Model checkpoints: a self-describing JSON container with a SHA-256
    //! digest over the numeric payload.
    //!
    //! Layout (format version 1), top-level keys:
    //! `format`, `version`, `preset`, `parts`, `dim`, `tied`,
    //! `trainable_core`, `entities`, `relations`, `core`, `head`, `rel`,
    //! `tail` (null when tied), optional `reg`
    //! (`{kind, l1, l2, l3, l4, alpha}`), `sha256`.
    //! All numeric arrays are row-major `f64` with round-trip precision.

    use super::*;
    use crate::reg::RegConfig;
    use sha2::{Digest, Sha256};
    use std::path::Path;

    pub const FORMAT: &str = "kgc-checkpoint";
    pub const VERSION: u32 = 1;

    #[derive(Serialize, Deserialize)]
    struct CheckpointFile {
        format: String,
        version: u32,
        preset: PresetKind,
        parts: usize,
        dim: usize,
        tied: bool,
        trainable_core: bool,
        entities: usize,
        relations: usize,
        core: Vec<f64>,
        head: Vec<f64>,
        rel: Vec<f64>,
        tail: Option<Vec<f64>>,
        #[serde(default)]
        reg: Option<RegConfig>,
        sha256: String,
    }

    fn digest(file: &CheckpointFile) -> String {
        let mut h = Sha256::new();
        h.update(file.preset.name().as_bytes());
        for v in [
            file.parts as u64,
            file.dim as u64,
            file.entities as u64,
            file.relations as u64,
            file.tied as u64,
            file.trainable_core as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        let mut feed = |xs: &[f64]| {
            for x in xs {
                h.update(x.to_le_bytes());
            }
        };
        feed(&file.core);
        feed(&file.head);
        feed(&file.rel);
        if let Some(t) = &file.tail {
            feed(t);
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn save(model: &TdbModel, reg: Option<&RegConfig>, path: &Path) -> Result<()> {
        let mut file = CheckpointFile {
            format: FORMAT.to_string(),
            version: VERSION,
            preset: model.kind(),
            parts: model.parts(),
            dim: model.dim(),
            tied: model.tied(),
            trainable_core: model.core().trainable(),
            entities: model.n_entities(),
            relations: model.n_relations(),
            core: model.core().values().values().to_vec(),
            head: model.head().values().to_vec(),
            rel: model.rel().values().to_vec(),
            tail: (!model.tied()).then(|| model.tail().values().to_vec()),
            reg: reg.cloned(),
            sha256: String::new(),
        };
        file.sha256 = digest(&file);
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<(TdbModel, Option<RegConfig>)> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != FORMAT {
            return Err(Error::Integrity(format!(
                "unexpected format marker `{}`",
                file.format
            )));
        }
        if file.version != VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let want = digest(&file);
        if want != file.sha256 {
            return Err(Error::Integrity(
                "sha256 digest does not match payload".into(),
            ));
        }
        if file.parts == 0 || file.dim % file.parts != 0 {
            return Err(Error::Integrity(format!(
                "dim {} not divisible by parts {}",
                file.dim, file.parts
            )));
        }
        let blocks = file.dim / file.parts;
        let core = CoreTensor::new(
            DenseTensor3::from_values((file.parts, file.parts, file.parts), file.core)?,
            file.trainable_core,
        )?;
        let head = EmbeddingTable::from_values(file.entities, blocks, file.parts, file.head)?;
        let rel = EmbeddingTable::from_values(file.relations, blocks, file.parts, file.rel)?;
        let tail = match (file.tied, file.tail) {
            (true, None) => None,
            (false, Some(t)) => Some(EmbeddingTable::from_values(
                file.entities,
                blocks,
                file.parts,
                t,
            )?),
            _ => {
                return Err(Error::Integrity(
                    "tied flag inconsistent with tail payload".into(),
                ))
            }
        };
        let model = TdbModel::from_parts(file.preset, head, rel, tail, core)?;
        Ok((model, file.reg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Direct triple-loop transcription of the general form, independent of
    /// the production scoring path.
    fn score_loop(model: &TdbModel, i: usize, j: usize, k: usize) -> f64 {
        let p = model.parts();
        let mut score = 0.0;
        for d in 0..model.blocks() {
            let h = model.head().row(i, d);
            let r = model.rel().row(j, d);
            let t = model.tail().row(k, d);
            for l in 0..p {
                for m in 0..p {
                    for n in 0..p {
                        score += model.core().get(l, m, n) * h[l] * r[m] * t[n];
                    }
                }
            }
        }
        score
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_model(kind: PresetKind, ents: usize, rels: usize, dim: usize, seed: u64) -> TdbModel {
        let preset = ModelPreset::new(kind, dim);
        TdbModel::new_random(&preset, ents, rels, dim, &mut rng(seed)).unwrap()
    }

    #[test]
    fn preset_core_shapes_and_flags() {
        for kind in PresetKind::ALL {
            let dim = kind.default_parts(8).max(1) * 2;
            let preset = ModelPreset::new(kind, dim);
            let core = build_preset_core(&preset, dim).unwrap();
            assert_eq!(core.parts(), preset.parts);
            if kind == PresetKind::Tucker {
                assert!(core.trainable());
                assert_eq!(core.parts(), dim);
            } else {
                assert!(!core.trainable());
                assert!(core
                    .values()
                    .values()
                    .iter()
                    .all(|&v| v == 0.0 || v == 1.0 || v == -1.0));
            }
        }
    }

    #[test]
    fn complex_core_sign_pattern() {
        let preset = ModelPreset::new(PresetKind::Complex, 4);
        let core = build_preset_core(&preset, 4).unwrap();
        assert_eq!(core.get(0, 0, 0), 1.0);
        assert_eq!(core.get(1, 0, 1), 1.0);
        assert_eq!(core.get(0, 1, 1), 1.0);
        assert_eq!(core.get(1, 1, 0), -1.0);
        let nonzeros = core.values().values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzeros, 4);
    }

    #[test]
    fn simple_core_sign_pattern() {
        let preset = ModelPreset::new(PresetKind::Simple, 4);
        let core = build_preset_core(&preset, 4).unwrap();
        assert_eq!(core.get(0, 0, 1), 1.0);
        assert_eq!(core.get(1, 1, 0), 1.0);
        let nonzeros = core.values().values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzeros, 2);
    }

    #[test]
    fn cp_core_is_scalar_one() {
        let preset = ModelPreset::new(PresetKind::Cp, 3);
        let core = build_preset_core(&preset, 3).unwrap();
        assert_eq!(core.parts(), 1);
        assert_eq!(core.values().values(), &[1.0]);
    }

    #[test]
    fn indivisible_dimension_is_rejected() {
        let preset = ModelPreset::new(PresetKind::Complex, 2);
        assert!(matches!(
            build_preset_core(&preset, 7),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_embeddings_score_zero() {
        for kind in PresetKind::ALL {
            let dim = kind.default_parts(4).max(1) * 2;
            let preset = ModelPreset::new(kind, dim);
            let model = TdbModel::new_zero(&preset, 3, 2, dim).unwrap();
            assert_eq!(model.score_triplet(0, 0, 1).unwrap(), 0.0);
            assert!(model
                .score_all_tails(2, 1)
                .unwrap()
                .iter()
                .all(|&s| s == 0.0));
        }
    }

    #[test]
    fn cp_hand_example_scores_63() {
        let preset = ModelPreset::new(PresetKind::Cp, 2);
        let mut model = TdbModel::new_zero(&preset, 2, 1, 2).unwrap();
        // D=2, P=1: rows are scalars, one per block
        model.head_mut().row_mut(0, 0)[0] = 1.0;
        model.head_mut().row_mut(0, 1)[0] = 2.0;
        model.rel_mut().row_mut(0, 0)[0] = 3.0;
        model.rel_mut().row_mut(0, 1)[0] = 4.0;
        {
            let tail = model.tail.as_mut().unwrap();
            tail.row_mut(1, 0)[0] = 5.0;
            tail.row_mut(1, 1)[0] = 6.0;
        }
        assert_eq!(model.score_triplet(0, 0, 1).unwrap(), 63.0);
    }

    #[test]
    fn complex_matches_complex_arithmetic_oracle() {
        let model = random_model(PresetKind::Complex, 4, 3, 4, 9);
        for (i, j, k) in [(0, 0, 1), (1, 2, 3), (3, 1, 0)] {
            let mut want = 0.0;
            for d in 0..model.blocks() {
                let h = model.head().row(i, d);
                let r = model.rel().row(j, d);
                let t = model.tail().row(k, d);
                // Re(h * r * conj(t)) with part 1 real, part 2 imaginary.
                want += (h[0] * r[0] - h[1] * r[1]) * t[0] + (h[0] * r[1] + h[1] * r[0]) * t[1];
            }
            let got = model.score_triplet(i, j, k).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-30));
        }
    }

    #[test]
    fn score_all_tails_matches_per_triplet() {
        for kind in PresetKind::ALL {
            let dim = kind.default_parts(4).max(1) * 2;
            let model = random_model(kind, 5, 3, dim, 17);
            for i in 0..5 {
                for j in 0..3 {
                    let all = model.score_all_tails(i, j).unwrap();
                    for k in 0..5 {
                        let one = model.score_triplet(i, j, k).unwrap();
                        assert!(
                            (all[k] - one).abs() <= 1e-12 * one.abs().max(1e-30),
                            "{kind:?} ({i},{j},{k})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn score_all_tails_matches_materialized_row() {
        let model = random_model(PresetKind::Tucker, 3, 2, 2, 19);
        let x = model.materialize(1 << 16).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let all = model.score_all_tails(i, j).unwrap();
                for (k, &s) in all.iter().enumerate() {
                    let want = x.get(i, j, k);
                    assert!((s - want).abs() <= 1e-12 * want.abs().max(1e-30));
                }
            }
        }
    }

    #[test]
    fn materialize_matches_score_triplet() {
        let model = random_model(PresetKind::Tucker, 4, 3, 4, 23);
        let x = model.materialize(1 << 20).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..4 {
                    let want = model.score_triplet(i, j, k).unwrap();
                    let got = x.get(i, j, k);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-30));
                }
            }
        }
    }

    #[test]
    fn materialize_agrees_with_triple_loop_order() {
        let model = random_model(PresetKind::Complex, 4, 3, 4, 29);
        let x = model.materialize(1 << 20).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                for k in 0..4 {
                    let want = score_loop(&model, i, j, k);
                    assert!((x.get(i, j, k) - want).abs() <= 1e-12 * want.abs().max(1e-30));
                }
            }
        }
    }

    #[test]
    fn materialize_refuses_over_budget() {
        let model = random_model(PresetKind::Cp, 10, 4, 2, 31);
        let err = model.materialize(399).unwrap_err();
        match err {
            Error::BudgetExceeded { required, budget } => {
                assert_eq!(required, 400);
                assert_eq!(budget, 399);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn tied_model_shares_storage() {
        let mut model = random_model(PresetKind::DistMult, 3, 2, 4, 37);
        assert!(model.tied());
        let before = model.score_triplet(0, 0, 2).unwrap();
        // mutate entity 2 through the head table; tail scores must move
        model.head_mut().row_mut(2, 0)[0] += 1.0;
        let after = model.score_triplet(0, 0, 2).unwrap();
        assert_ne!(before, after);
    }

    #[test]
    fn score_is_linear_in_each_factor() {
        let model = random_model(PresetKind::Quate, 4, 2, 8, 41);
        let base = model.score_triplet(1, 0, 3).unwrap();
        let c = 2.75;
        let dim = model.dim();

        let mut m = model.clone();
        for v in &mut m.param_mut(ParamId::Head)[dim..2 * dim] {
            *v *= c; // head row of entity 1
        }
        let got = m.score_triplet(1, 0, 3).unwrap();
        assert!((got - c * base).abs() <= 1e-12 * (c * base).abs().max(1e-30));

        let mut m = model.clone();
        for v in &mut m.param_mut(ParamId::Rel)[0..dim] {
            *v *= c;
        }
        let got = m.score_triplet(1, 0, 3).unwrap();
        assert!((got - c * base).abs() <= 1e-12 * (c * base).abs().max(1e-30));

        // tail row on a tied model: entity 3 appears only in the tail role here
        let mut m = model.clone();
        for v in &mut m.param_mut(ParamId::Head)[3 * dim..4 * dim] {
            *v *= c;
        }
        let got = m.score_triplet(1, 0, 3).unwrap();
        assert!((got - c * base).abs() <= 1e-12 * (c * base).abs().max(1e-30));
    }

    #[test]
    fn id_out_of_range_is_rejected() {
        let model = random_model(PresetKind::Cp, 3, 2, 2, 43);
        assert!(matches!(
            model.score_triplet(3, 0, 0),
            Err(Error::IdOutOfRange { .. })
        ));
        assert!(matches!(
            model.score_triplet(0, 2, 0),
            Err(Error::IdOutOfRange { .. })
        ));
        assert!(matches!(
            model.score_all_tails(0, 5),
            Err(Error::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn param_count_formula() {
        let tied = random_model(PresetKind::Complex, 5, 3, 4, 47);
        assert_eq!(tied.param_count(), 5 * 4 + 3 * 4);
        let untied = random_model(PresetKind::Cp, 5, 3, 4, 47);
        assert_eq!(untied.param_count(), 2 * 5 * 4 + 3 * 4);
        let tucker = random_model(PresetKind::Tucker, 5, 3, 4, 47);
        assert_eq!(tucker.param_count(), 64 + 5 * 4 + 3 * 4);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = random_model(PresetKind::Tucker, 4, 3, 4, 53);
        checkpoint::save(&model, None, &path).unwrap();
        let (back, reg) = checkpoint::load(&path).unwrap();
        assert!(reg.is_none());
        assert_eq!(back.kind(), model.kind());
        assert_eq!(back.param(ParamId::Head), model.param(ParamId::Head));
        assert_eq!(back.param(ParamId::Core), model.param(ParamId::Core));
    }

    #[test]
    fn tampered_checkpoint_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = random_model(PresetKind::Complex, 3, 2, 4, 59);
        checkpoint::save(&model, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // flip a digit inside a numeric payload field
        let tampered = text.replacen("0.000", "0.001", 1);
        assert_ne!(text, tampered, "tamper site not found");
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(
            checkpoint::load(&path),
            Err(Error::Integrity(_)) | Err(Error::Json(_))
        ));
    }
}
