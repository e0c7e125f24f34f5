//! Embedding matrices, pretrained word vectors, the language-to-vision mapper
//! and imagined multimodal embeddings.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::Vocabulary;
use crate::error::{Error, IoContext, Result};
use crate::tensor::io::{load_bundle, save_bundle};
use crate::tensor::ops::{l2_normalize_slice, matvec_add, matvec_t_add, outer_add};
use crate::tensor::{InitScheme, ParamId, ParamRegistry, Rng, Tensor};

/// Width of the linguistic (GloVe) vectors.
pub const LINGUISTIC_DIM: usize = 300;
/// Width of the visual space the mapper predicts into.
pub const VISUAL_DIM: usize = 128;
pub const MULTIMODAL_DIM: usize = LINGUISTIC_DIM + VISUAL_DIM;

/// Stddev for rows with no pretrained vector.
pub const FALLBACK_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Gaussian-initialized and learned with the model.
    Along,
    Glove,
    Multimodal,
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::Along => "along",
            EmbeddingSource::Glove => "glove",
            EmbeddingSource::Multimodal => "multimodal",
        }
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "along" => Ok(EmbeddingSource::Along),
            "glove" => Ok(EmbeddingSource::Glove),
            "multimodal" => Ok(EmbeddingSource::Multimodal),
            _ => Err(Error::Config(format!(
                "unknown embeddings mode {s:?} (expected along, glove or multimodal)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    pub matrix: Tensor,
    pub trainable: bool,
    pub source: EmbeddingSource,
}

/// Word vectors read from a `word v1 … vd` text file.
#[derive(Clone, Debug, Default)]
pub struct WordVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut out = WordVectors::default();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(origin, i + 1, format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(Error::parse(origin, i + 1, "word without a vector"));
            }
            if out.dim == 0 {
                out.dim = values.len();
            } else if values.len() != out.dim {
                return Err(Error::format(format!(
                    "{}: line {} has {} components, earlier lines {}",
                    origin.display(),
                    i + 1,
                    values.len(),
                    out.dim
                )));
            }
            out.vectors.entry(word.to_string()).or_insert(values);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_path(path)?;
        Self::parse(&text, path)
    }

    /// 0 for an empty file.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

/// Builds a `vocab × dim` matrix from pretrained vectors; rows without a
/// vector (including the special tokens) are drawn from N(0, 0.01²).
/// Returns the matrix and the number of non-special words covered.
pub fn pretrained_matrix(
    vectors: &WordVectors,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut Rng,
) -> Result<(Tensor, usize)> {
    if vectors.dim() != 0 && vectors.dim() != dim {
        return Err(Error::format(format!(
            "word vectors have {} components, expected {dim}",
            vectors.dim()
        )));
    }
    let mut m = Tensor::zeros(&[vocab.len(), dim])?;
    let mut covered = 0;
    let specials = crate::corpus::vocab::SPECIALS.len();
    for id in 0..vocab.len() {
        let row = m.row_mut(id);
        let found = if id < specials { None } else { vectors.get(vocab.token(id)?) };
        match found {
            Some(v) => {
                row.copy_from_slice(v);
                covered += 1;
            }
            None => row.iter_mut().for_each(|x| *x = FALLBACK_STD * rng.normal()),
        }
    }
    Ok((m, covered))
}

pub fn load_pretrained_vectors(
    path: &Path,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<(EmbeddingMatrix, usize)> {
    let vectors = WordVectors::load(path)?;
    let dim = if vectors.is_empty() { LINGUISTIC_DIM } else { vectors.dim() };
    let (matrix, covered) = pretrained_matrix(&vectors, vocab, dim, rng)?;
    log::info!("{}: {covered} of {} words covered", path.display(), vocab.len());
    Ok((
        EmbeddingMatrix {
            matrix,
            trainable: true,
            source: EmbeddingSource::Glove,
        },
        covered,
    ))
}

/// Element-wise mean of visual feature vectors.
pub fn average_visual(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("average_visual: no feature vectors"))?;
    let mut sum = vec![0.0; first.len()];
    for f in features {
        if f.len() != sum.len() {
            return Err(Error::invalid(format!(
                "average_visual: vector of length {} among length {}",
                f.len(),
                sum.len()
            )));
        }
        sum.iter_mut().zip(f).for_each(|(s, x)| *s += x);
    }
    let n = features.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// A word with its linguistic vector `l_w` and visual target `v_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct WordPair {
    pub word: String,
    pub linguistic: Vec<f64>,
    pub visual: Vec<f64>,
}

/// Parses `word l1 … l_dl | v1 … v_dv` lines.
pub fn parse_word_pairs(text: &str, origin: &Path) -> Result<Vec<WordPair>> {
    let mut pairs: Vec<WordPair> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (left, right) = line
            .split_once('|')
            .ok_or_else(|| Error::parse(origin, i + 1, "missing `|` separator"))?;
        let mut left = left.split_whitespace();
        let word = left
            .next()
            .ok_or_else(|| Error::parse(origin, i + 1, "missing word"))?;
        let nums = |it: &mut dyn Iterator<Item = &str>| -> Result<Vec<f64>> {
            it.map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, i + 1, format!("bad number {f:?}")))
            })
            .collect()
        };
        let pair = WordPair {
            word: word.to_string(),
            linguistic: nums(&mut left)?,
            visual: nums(&mut right.split_whitespace())?,
        };
        if pair.linguistic.is_empty() || pair.visual.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty vector"));
        }
        if let Some(p) = pairs.first() {
            if (p.linguistic.len(), p.visual.len()) != (pair.linguistic.len(), pair.visual.len()) {
                return Err(Error::format(format!(
                    "{}: line {} has dims ({}, {}), earlier lines ({}, {})",
                    origin.display(),
                    i + 1,
                    pair.linguistic.len(),
                    pair.visual.len(),
                    p.linguistic.len(),
                    p.visual.len()
                )));
            }
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_word_pairs(path: &Path) -> Result<Vec<WordPair>> {
    let text = std::fs::read_to_string(path).with_path(path)?;
    parse_word_pairs(&text, path)
}

pub fn word_pairs_to_text(pairs: &[WordPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.word);
        for v in &p.linguistic {
            let _ = write!(s, " {v}");
        }
        s.push_str(" |");
        for v in &p.visual {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

/// Pairs with `v_w = A l_w` for a random `A`, `l_w ~ N(0, 1)`.
pub fn synth_word_pairs(seed: u64, n: usize, d_l: usize, d_v: usize) -> (Vec<WordPair>, Tensor) {
    let mut rng = Rng::new(seed);
    let a_data = (0..d_v * d_l).map(|_| rng.normal()).collect();
    let a = Tensor::from_vec(&[d_v, d_l], a_data).expect("shape matches data");
    let pairs = (0..n)
        .map(|k| {
            let l: Vec<f64> = (0..d_l).map(|_| rng.normal()).collect();
            let mut v = vec![0.0; d_v];
            matvec_add(&a, &l, &mut v);
            WordPair {
                word: format!("w{k}"),
                linguistic: l,
                visual: v,
            }
        })
        .collect();
    (pairs, a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub learning_rate: f64,
    pub input_dropout: f64,
    pub epochs: usize,
    /// Width of an optional tanh hidden layer; `None` is a single affine map.
    pub hidden: Option<usize>,
    pub seed: u64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            learning_rate: 0.1,
            input_dropout: 0.1,
            epochs: 175,
            hidden: None,
            seed: 1,
        }
    }
}

/// Parameter handles of a mapper inside its registry.
#[derive(Clone, Copy, Debug)]
pub struct MapperLayout {
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: Option<(ParamId, ParamId)>,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// The language-to-vision map `f(l) = W l + b`, optionally with a tanh
/// hidden layer in front.
#[derive(Clone, Debug)]
pub struct VisualMapper {
    params: ParamRegistry,
    layout: MapperLayout,
}

struct MapperTrace {
    input: Vec<f64>,
    hidden: Option<Vec<f64>>,
    output: Vec<f64>,
}

fn mapper_forward(layout: &MapperLayout, reg: &ParamRegistry, l: &[f64], mask: Option<&[f64]>) -> MapperTrace {
    let p = reg.values();
    let input: Vec<f64> = match mask {
        Some(m) => l.iter().zip(m).map(|(x, m)| x * m).collect(),
        None => l.to_vec(),
    };
    let hidden = layout.hidden.map(|(w, b)| {
        let mut h = p[b].data().to_vec();
        matvec_add(&p[w], &input, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        h
    });
    let mut output = p[layout.bias].data().to_vec();
    matvec_add(&p[layout.weight], hidden.as_deref().unwrap_or(&input), &mut output);
    MapperTrace {
        input,
        hidden,
        output,
    }
}

/// Mean over `pairs` of `‖f(l_w) − v_w‖² / d_v`, accumulating its gradient.
/// `masks[k]`, when present, multiplies the input of pair `k`.
pub fn mapper_loss(
    layout: &MapperLayout,
    reg: &mut ParamRegistry,
    pairs: &[WordPair],
    masks: &[Option<Vec<f64>>],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("mapper loss over zero pairs"));
    }
    let scale = 1.0 / (pairs.len() * layout.output_dim) as f64;
    let mut total = 0.0;
    for (k, pair) in pairs.iter().enumerate() {
        check_pair(layout, pair)?;
        let t = mapper_forward(layout, reg, &pair.linguistic, masks.get(k).and_then(|m| m.as_deref()));
        let diff: Vec<f64> = t.output.iter().zip(&pair.visual).map(|(o, v)| o - v).collect();
        total += diff.iter().map(|d| d * d).sum::<f64>();
        let d_out: Vec<f64> = diff.iter().map(|d| 2.0 * scale * d).collect();

        let (p, mut g) = reg.split_mut();
        let top_input = t.hidden.as_deref().unwrap_or(&t.input);
        outer_add(&mut g[layout.weight], &d_out, top_input);
        g[layout.bias]
            .data_mut()
            .iter_mut()
            .zip(&d_out)
            .for_each(|(a, d)| *a += d);
        if let (Some((w, b)), Some(h)) = (layout.hidden, &t.hidden) {
            let mut dh = vec![0.0; h.len()];
            matvec_t_add(&p[layout.weight], &d_out, &mut dh);
            let dpre: Vec<f64> = dh.iter().zip(h).map(|(d, h)| d * (1.0 - h * h)).collect();
            outer_add(&mut g[w], &dpre, &t.input);
            g[b].data_mut().iter_mut().zip(&dpre).for_each(|(a, d)| *a += d);
        }
    }
    Ok(total * scale)
}

fn check_pair(layout: &MapperLayout, pair: &WordPair) -> Result<()> {
    if pair.linguistic.len() != layout.input_dim || pair.visual.len() != layout.output_dim {
        return Err(Error::invalid(format!(
            "pair {:?} has dims ({}, {}), mapper expects ({}, {})",
            pair.word,
            pair.linguistic.len(),
            pair.visual.len(),
            layout.input_dim,
            layout.output_dim
        )));
    }
    Ok(())
}

impl VisualMapper {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Option<usize>, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamRegistry::new();
        let mut top_in = input_dim;
        let hidden = match hidden {
            Some(h) => {
                let w = params.add("hidden.weight", &[h, input_dim], InitScheme::Gaussian, rng)?;
                let b = params.add("hidden.bias", &[h], InitScheme::Zero, rng)?;
                top_in = h;
                Some((w, b))
            }
            None => None,
        };
        let weight = params.add("weight", &[output_dim, top_in], InitScheme::Gaussian, rng)?;
        let bias = params.add("bias", &[output_dim], InitScheme::Zero, rng)?;
        Ok(VisualMapper {
            params,
            layout: MapperLayout {
                weight,
                bias,
                hidden,
                input_dim,
                output_dim,
            },
        })
    }

    /// A single affine mapper with the given `weight [d_v × d_l]` and `bias [d_v]`.
    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::invalid(format!(
                "mapper weight {:?} and bias {:?} do not fit",
                weight.shape(),
                bias.shape()
            )));
        }
        let (output_dim, input_dim) = (weight.rows(), weight.cols());
        let mut params = ParamRegistry::new();
        let weight = params.insert("weight", weight, InitScheme::Gaussian)?;
        let bias = params.insert("bias", bias, InitScheme::Zero)?;
        Ok(VisualMapper {
            params,
            layout: MapperLayout {
                weight,
                bias,
                hidden: None,
                input_dim,
                output_dim,
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layout.output_dim
    }

    pub fn layout(&self) -> MapperLayout {
        self.layout
    }

    pub fn params(&self) -> &ParamRegistry {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamRegistry {
        &mut self.params
    }

    pub fn weight(&self) -> &Tensor {
        self.params.value(self.layout.weight)
    }

    pub fn bias(&self) -> &Tensor {
        self.params.value(self.layout.bias)
    }

    /// The imagined representation `f(l_w)`.
    pub fn imagine(&self, linguistic: &[f64]) -> Result<Vec<f64>> {
        if linguistic.len() != self.layout.input_dim {
            return Err(Error::invalid(format!(
                "imagine: input of length {}, mapper expects {}",
                linguistic.len(),
                self.layout.input_dim
            )));
        }
        Ok(mapper_forward(&self.layout, &self.params, linguistic, None).output)
    }

    /// Mean squared error without dropout.
    pub fn mse(&self, pairs: &[WordPair]) -> Result<f64> {
        let mut total = 0.0;
        for p in pairs {
            check_pair(&self.layout, p)?;
            let out = self.imagine(&p.linguistic)?;
            total += out
                .iter()
                .zip(&p.visual)
                .map(|(o, v)| (o - v) * (o - v))
                .sum::<f64>();
        }
        Ok(total / (pairs.len().max(1) * self.layout.output_dim) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_bundle(path, &self.params.snapshot())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_bundle(path)?;
        let find = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
        let (weight, bias) = match (find("weight"), find("bias")) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(Error::format(format!(
                    "{}: mapper checkpoint needs `weight` and `bias` entries",
                    path.display()
                )))
            }
        };
        match (find("hidden.weight"), find("hidden.bias")) {
            (None, None) if entries.len() == 2 => Self::from_parts(weight, bias),
            (Some(hw), Some(_)) if entries.len() == 4 => {
                let mut m = Self::new(hw.cols(), weight.rows(), Some(hw.rows()), &mut Rng::new(0))?;
                m.params.load_snapshot(&entries)?;
                Ok(m)
            }
            _ => Err(Error::format(format!(
                "{}: unexpected mapper checkpoint entries",
                path.display()
            ))),
        }
    }
}

/// Per-epoch training record of [`train_mapper`].
#[derive(Clone, Debug, PartialEq)]
pub struct MapperReport {
    /// Dropout-free MSE over all pairs after each epoch.
    pub epoch_mse: Vec<f64>,
}

impl MapperReport {
    pub fn final_mse(&self) -> Option<f64> {
        self.epoch_mse.last().copied()
    }
}

/// Trains a mapper with per-pair SGD on the squared error, with inverted
/// dropout on the input vector.
pub fn train_mapper(pairs: &[WordPair], config: &MapperConfig) -> Result<(VisualMapper, MapperReport)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("train_mapper needs at least one pair"))?;
    if !(0.0..1.0).contains(&config.input_dropout) {
        return Err(Error::invalid(format!(
            "mapper dropout {} outside [0, 1)",
            config.input_dropout
        )));
    }
    let mut init_rng = Rng::derive(config.seed, "mapper-init");
    let mut order_rng = Rng::derive(config.seed, "mapper-order");
    let mut drop_rng = Rng::derive(config.seed, "mapper-dropout");
    let mut mapper = VisualMapper::new(
        first.linguistic.len(),
        first.visual.len(),
        config.hidden,
        &mut init_rng,
    )?;
    for p in pairs {
        check_pair(&mapper.layout, p)?;
    }
    let keep = 1.0 - config.input_dropout;
    let mut report = MapperReport {
        epoch_mse: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order_rng.shuffle(&mut order);
        for &k in &order {
            let mask = (config.input_dropout > 0.0).then(|| {
                (0..mapper.layout.input_dim)
                    .map(|_| if drop_rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect::<Vec<f64>>()
            });
            let layout = mapper.layout;
            mapper.params.zero_grads();
            let loss = mapper_loss(&layout, &mut mapper.params, std::slice::from_ref(&pairs[k]), &[mask])?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("mapper loss diverged in epoch {}", epoch + 1)));
            }
            let ids: Vec<ParamId> = mapper.params.ids().collect();
            for id in ids {
                let g = mapper.params.grad(id).clone();
                let v = mapper.params.value_mut(id);
                v.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(x, g)| *x -= config.learning_rate * g);
            }
        }
        let mse = mapper.mse(pairs)?;
        log::debug!("mapper epoch {}: mse {mse:.6e}", epoch + 1);
        report.epoch_mse.push(mse);
    }
    mapper.params.zero_grads();
    Ok((mapper, report))
}

/// `concat(l_w, l2_normalize(imagined))`, exactly 300 + 128 = 428 wide.
pub fn multimodal_embed(linguistic: &[f64], imagined: &[f64]) -> Result<Vec<f64>> {
    if linguistic.len() != LINGUISTIC_DIM || imagined.len() != VISUAL_DIM {
        return Err(Error::invalid(format!(
            "multimodal embedding needs {LINGUISTIC_DIM}+{VISUAL_DIM} dims, got {}+{}",
            linguistic.len(),
            imagined.len()
        )));
    }
    let mut out = Vec::with_capacity(MULTIMODAL_DIM);
    out.extend_from_slice(linguistic);
    let mut v = imagined.to_vec();
    l2_normalize_slice(&mut v);
    out.extend_from_slice(&v);
    Ok(out)
}

/// Multimodal embedding rows for every word of `vocab`. Words without a
/// pretrained vector get a Gaussian linguistic part and its imagined part.
pub fn build_multimodal_matrix(
    vectors: &WordVectors,
    vocab: &Vocabulary,
    mapper: &VisualMapper,
    rng: &mut Rng,
) -> Result<(EmbeddingMatrix, usize)> {
    if mapper.input_dim() != LINGUISTIC_DIM || mapper.output_dim() != VISUAL_DIM {
        return Err(Error::format(format!(
            "mapper is {}→{}, multimodal embeddings need {LINGUISTIC_DIM}→{VISUAL_DIM}",
            mapper.input_dim(),
            mapper.output_dim()
        )));
    }
    let (linguistic, covered) = pretrained_matrix(vectors, vocab, LINGUISTIC_DIM, rng)?;
    let mut m = Tensor::zeros(&[vocab.len(), MULTIMODAL_DIM])?;
    for id in 0..vocab.len() {
        let l = linguistic.row(id);
        let row = multimodal_embed(l, &mapper.imagine(l)?)?;
        m.row_mut(id).copy_from_slice(&row);
    }
    Ok((
        EmbeddingMatrix {
            matrix: m,
            trainable: true,
            source: EmbeddingSource::Multimodal,
        },
        covered,
    ))
}
