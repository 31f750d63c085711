//! Corpus-level scores: attack success rate, Fréchet distance between
//! embedding distributions and mean log-spectral distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackResult};
use crate::audio::{lsd, mel_spectrogram, StftParams, Waveform};
use crate::error::{Error, Result};
use crate::model::ModelHandle;

pub const EVAL_SCHEMA_VERSION: u32 = 1;
pub const TOY_EMBEDDING_ID: &str = "toy-logmel16-v1";
const TOY_MELS: usize = 16;
const TOY_FLOOR: f64 = 1e-5;
/// Band means, band variances, flux mean and flux variance.
pub const TOY_EMBEDDING_DIM: usize = 2 * TOY_MELS + 2;
const EIGEN_TOLERANCE: f64 = 1e-10;

/// Successes among originally correct clips over the number of such clips.
pub fn asr(results: &[AttackResult], originally_correct: &[bool]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidParameter("no attack results".into()));
    }
    if results.len() != originally_correct.len() {
        return Err(Error::LengthMismatch {
            expected: results.len(),
            actual: originally_correct.len(),
        });
    }
    let (mut correct, mut fooled) = (0usize, 0usize);
    for (r, ok) in results.iter().zip(originally_correct) {
        if *ok {
            correct += 1;
            fooled += usize::from(r.success);
        }
    }
    if correct == 0 {
        return Err(Error::NoCorrectClips);
    }
    Ok(fooled as f64 / correct as f64)
}

/// Maps audio to a fixed-length feature vector.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, x: &Waveform) -> Result<Vec<f64>>;
}

/// Log-mel band statistics plus spectral flux statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEmbedder;

impl Embedder for ToyEmbedder {
    fn id(&self) -> &str {
        TOY_EMBEDDING_ID
    }

    fn dim(&self) -> usize {
        TOY_EMBEDDING_DIM
    }

    fn embed(&self, x: &Waveform) -> Result<Vec<f64>> {
        embed_toy(x)
    }
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var)
}

/// Per-band mean and variance of 16-band log-mel magnitudes over frames,
/// followed by mean and variance of the frame-to-frame L2 spectral flux.
pub fn embed_toy(x: &Waveform) -> Result<Vec<f64>> {
    let mel = mel_spectrogram(x, &StftParams::default(), TOY_MELS, TOY_FLOOR)?;
    let frames = &mel.frames;
    let mut out = Vec::with_capacity(TOY_EMBEDDING_DIM);
    let stats: Vec<(f64, f64)> = frames.columns().into_iter().map(|c| mean_var(c.iter().copied())).collect();
    out.extend(stats.iter().map(|s| s.0));
    out.extend(stats.iter().map(|s| s.1));
    let flux: Vec<f64> = frames
        .rows()
        .into_iter()
        .zip(frames.rows().into_iter().skip(1))
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (q - p) * (q - p)).sum::<f64>().sqrt())
        .collect();
    let (fm, fv) = mean_var(flux.iter().copied());
    out.push(fm);
    out.push(fv);
    Ok(out)
}

/// `n x d` embeddings from one extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: DMatrix<f64>,
    extractor_id: String,
}

impl EmbeddingSet {
    /// Requires `n >= d + 1` so the covariance estimate can be full rank.
    pub fn new(rows: &[Vec<f64>], extractor_id: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::IncompatibleEmbeddings("empty embedding set".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::IncompatibleEmbeddings(format!(
                "row of dimension {} in a set of dimension {d}",
                bad.len()
            )));
        }
        if rows.len() < d + 1 {
            return Err(Error::RankDeficient(format!(
                "{} vectors of dimension {d}; at least {} needed",
                rows.len(),
                d + 1
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("embeddings must be finite".into()));
        }
        Ok(Self {
            vectors: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            extractor_id: extractor_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    /// Mean and unbiased covariance.
    pub fn gaussian(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.len() as f64;
        let mean = self.vectors.row_mean().transpose();
        let mut centered = self.vectors.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n - 1.0);
        (mean, cov)
    }
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigen_clamped(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut e = SymmetricEigen::new(symmetric(m));
    e.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    e
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = eigen_clamped(m);
    let root = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    symmetric(&(&e.eigenvectors * root * e.eigenvectors.transpose()))
}

fn check_rank(cov: &DMatrix<f64>, which: &str) -> Result<()> {
    let e = eigen_clamped(cov);
    let max = e.eigenvalues.max();
    let min = e.eigenvalues.min();
    if !(max > 0.0) || min <= EIGEN_TOLERANCE * max {
        return Err(Error::RankDeficient(format!(
            "{which} covariance has eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    Ok(())
}

/// Fréchet distance between Gaussians fitted to two embedding sets, using
/// the symmetric form `(S_a^1/2 S_b S_a^1/2)^1/2` for the cross term.
pub fn fad(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.extractor_id != b.extractor_id {
        return Err(Error::IncompatibleEmbeddings(format!(
            "extractors {} and {} differ",
            a.extractor_id, b.extractor_id
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::IncompatibleEmbeddings(format!(
            "dimensions {} and {} differ",
            a.dim(),
            b.dim()
        )));
    }
    let (mu_a, cov_a) = a.gaussian();
    let (mu_b, cov_b) = b.gaussian();
    check_rank(&cov_a, "first")?;
    check_rank(&cov_b, "second")?;
    let root_a = sqrt_psd(&cov_a);
    let cross = sqrt_psd(&(&root_a * &cov_b * &root_a));
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let trace_term = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub clips: usize,
    pub originally_correct: usize,
    pub successes: usize,
    pub post_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEcho {
    pub stft: StftParams,
    /// Distinct attack settings found among the results, in first-seen order.
    pub attack_configs: Vec<AttackConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub extractor_id: String,
    pub asr: f64,
    pub accuracy_post: f64,
    /// `None` when the corpus is too small for full-rank covariances.
    pub fad: Option<f64>,
    pub lsd_mean: f64,
    pub counts: EvalCounts,
    pub config_echo: EvalEcho,
}

pub const CSV_HEADER: &str = "ASR,Acc,FAD,LSD";

impl EvalReport {
    /// One header line and one row; an undefined FAD is left empty.
    pub fn to_csv(&self) -> String {
        let fad = self.fad.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{CSV_HEADER}\n{:.6},{:.6},{fad},{:.6}\n",
            self.asr, self.accuracy_post, self.lsd_mean
        )
    }
}

/// Scores a batch of attacks with the toy embedder.
pub fn evaluate_corpus(
    originals: &[Waveform],
    results: &[AttackResult],
    m: &ModelHandle,
    stft: &StftParams,
) -> Result<EvalReport> {
    evaluate_corpus_with(originals, results, m, stft, &ToyEmbedder)
}

/// Scores a batch of attacks. Queries `m` twice per clip, once on the
/// original and once on the adversarial audio.
pub fn evaluate_corpus_with(
    originals: &[Waveform],
    results: &[AttackResult],
    m: &ModelHandle,
    stft: &StftParams,
    embedder: &dyn Embedder,
) -> Result<EvalReport> {
    if originals.len() != results.len() {
        return Err(Error::LengthMismatch {
            expected: originals.len(),
            actual: results.len(),
        });
    }
    let mut originally_correct = Vec::with_capacity(results.len());
    let mut post_correct = 0;
    let mut lsd_sum = 0.0;
    let mut emb_a = Vec::with_capacity(results.len());
    let mut emb_b = Vec::with_capacity(results.len());
    let mut configs: Vec<AttackConfig> = Vec::new();
    for (x, r) in originals.iter().zip(results) {
        let y = r.original_label;
        originally_correct.push(m.predict(x)?.argmax() == y);
        post_correct += usize::from(m.predict(&r.adversarial)?.argmax() == y);
        lsd_sum += lsd(x, &r.adversarial, stft)?;
        emb_a.push(embedder.embed(x)?);
        emb_b.push(embedder.embed(&r.adversarial)?);
        if !configs.contains(&r.config) {
            configs.push(r.config.clone());
        }
    }
    let asr_value = asr(results, &originally_correct)?;
    let fad_value = if results.len() > embedder.dim() {
        Some(fad(
            &EmbeddingSet::new(&emb_a, embedder.id())?,
            &EmbeddingSet::new(&emb_b, embedder.id())?,
        )?)
    } else {
        log::warn!(
            "{} clips are too few for a {}-dimensional FAD; leaving it undefined",
            results.len(),
            embedder.dim()
        );
        None
    };
    let correct = originally_correct.iter().filter(|c| **c).count();
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        extractor_id: embedder.id().to_string(),
        asr: asr_value,
        accuracy_post: post_correct as f64 / results.len() as f64,
        fad: fad_value,
        lsd_mean: lsd_sum / results.len() as f64,
        counts: EvalCounts {
            clips: results.len(),
            originally_correct: correct,
            successes: results
                .iter()
                .zip(&originally_correct)
                .filter(|(r, ok)| **ok && r.success)
                .count(),
            post_correct,
        },
        config_echo: EvalEcho {
            stft: *stft,
            attack_configs: configs,
        },
    })
}
