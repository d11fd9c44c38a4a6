//! The full build (corpus to histogram store) and a scoring model over the
//! resulting artifacts.

use std::path::Path;

use ndarray::Array2;

use crate::clustering::{aggregate_sppmi, column_normalize, kmeans, ClusteredSppmi, ContextClustering, EmbeddingTable};
use crate::cmd::{self, GroundSpace, SentenceEstimate};
use crate::config::RunConfig;
use crate::corpus::{accumulate_cooccurrences, build_vocabulary_from_lines, SparseCoocMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::estimates::{remove_pc, HistogramStore, PointEstimateTable};
use crate::ot::SinkhornConfig;
use crate::ppmi::{compute_sppmi, SppmiMatrix};

/// File names used for each stage's output inside a work directory.
pub mod files {
    pub const VOCAB: &str = "vocab.tsv";
    pub const COOC: &str = "cooc.bin";
    pub const SPPMI: &str = "sppmi.bin";
    pub const CLUSTERS: &str = "clusters.bin";
    pub const CLUSTERED: &str = "clustered.bin";
    pub const HISTOGRAMS: &str = "histograms.bin";
    pub const CONFIG: &str = "config.txt";
}

/// Every intermediate artifact of one build.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub vocab: Vocabulary,
    pub cooc: SparseCoocMatrix,
    pub sppmi: SppmiMatrix,
    pub clustering: ContextClustering,
    pub clustered: ClusteredSppmi,
    pub store: HistogramStore,
}

impl Artifacts {
    /// Writes every artifact plus the resolved config into `dir`.
    pub fn save(&self, dir: &Path, cfg: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.vocab.save_tsv(&dir.join(files::VOCAB))?;
        self.cooc.save(&dir.join(files::COOC))?;
        self.sppmi.save(&dir.join(files::SPPMI))?;
        self.clustering.save(&dir.join(files::CLUSTERS))?;
        self.clustered.save(&dir.join(files::CLUSTERED))?;
        self.store.save(&dir.join(files::HISTOGRAMS))?;
        let cfg_path = dir.join(files::CONFIG);
        std::fs::write(&cfg_path, cfg.render()).map_err(|e| Error::io(&cfg_path, e))
    }
}

/// Runs vocabulary, co-occurrence, SPPMI, clustering, aggregation, column
/// normalization and histogram construction.
pub fn build<S: AsRef<str> + Sync>(
    lines: &[S],
    cfg: &RunConfig,
    contexts: impl FnOnce(&Vocabulary) -> Result<EmbeddingTable>,
    identity: bool,
) -> Result<Artifacts> {
    cfg.validate()?;
    let vocab = build_vocabulary_from_lines(lines.iter().map(|l| l.as_ref()), cfg.min_count)?;
    let cooc = accumulate_cooccurrences(lines, &vocab, cfg.window, cfg.weighting)?;
    let sppmi = compute_sppmi(&cooc, cfg.alpha, cfg.shift)?;
    let emb = contexts(&vocab)?;
    if emb.len() != vocab.len() {
        return Err(Error::Shape(format!(
            "{} context vectors for {} vocabulary words",
            emb.len(),
            vocab.len()
        )));
    }
    let clustering = if identity {
        ContextClustering::identity(&emb, cfg.metric)
    } else {
        kmeans(&emb, cfg.k.min(emb.len()), cfg.seed, cfg.kmeans_iters, cfg.metric)?
    };
    let clustered = column_normalize(&aggregate_sppmi(&sppmi, &clustering)?, cfg.beta)?;
    let store = HistogramStore::build(&clustered)?;
    Ok(Artifacts {
        vocab,
        cooc,
        sppmi,
        clustering,
        clustered,
        store,
    })
}

/// Everything needed to score words and sentences.
#[derive(Debug, Clone)]
pub struct Model {
    vocab: Vocabulary,
    store: HistogramStore,
    space: GroundSpace,
    sinkhorn: SinkhornConfig,
}

impl Model {
    /// `points` holds one point embedding per vocabulary word. Applies PC
    /// removal to the points and mixing to the store as configured.
    pub fn new(
        vocab: Vocabulary,
        store: &HistogramStore,
        centroids: &Array2<f64>,
        points: Array2<f64>,
        cfg: &RunConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if store.len() != vocab.len() || points.nrows() != vocab.len() {
            return Err(Error::Shape(format!(
                "vocabulary has {} words, store {}, point table {}",
                vocab.len(),
                store.len(),
                points.nrows()
            )));
        }
        if store.k() != centroids.nrows() {
            return Err(Error::Shape(format!(
                "store uses {} clusters, clustering has {}",
                store.k(),
                centroids.nrows()
            )));
        }
        let points = if cfg.pc_removal {
            remove_pc(&PointEstimateTable::new(points), cfg.seed)?.vectors().clone()
        } else {
            points
        };
        let space = GroundSpace::new(centroids, &points, cfg.metric, cfg.p)?.with_preprocessing(cfg.normalization, cfg.clip)?;
        Ok(Self {
            vocab,
            store: store.mixed(cfg.mix)?,
            space,
            sinkhorn: cfg.sinkhorn(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn store(&self) -> &HistogramStore {
        &self.store
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn sinkhorn(&self) -> &SinkhornConfig {
        &self.sinkhorn
    }

    pub fn word_id(&self, word: &str) -> Result<usize> {
        self.vocab
            .id(word)
            .map(|i| i as usize)
            .ok_or_else(|| Error::Oov(word.to_string()))
    }

    /// CMD from `w1` to `w2`.
    pub fn word_distance(&self, w1: &str, w2: &str) -> Result<f64> {
        cmd::cmd(self.word_id(w1)?, self.word_id(w2)?, &self.store, &self.space, &self.sinkhorn)
    }

    /// CoMB of a whitespace-tokenized sentence; unknown tokens are skipped.
    pub fn sentence(&self, text: &str) -> Result<SentenceEstimate> {
        let ids: Vec<usize> = text
            .split_whitespace()
            .filter_map(|t| self.vocab.id(t))
            .map(|i| i as usize)
            .collect();
        cmd::comb(&ids, &self.store, &self.space, None, &self.sinkhorn)
    }

    pub fn sentence_distance(&self, s1: &str, s2: &str) -> Result<f64> {
        cmd::sentence_cmd(&self.sentence(s1)?, &self.sentence(s2)?, &self.space, &self.sinkhorn)
    }

    /// The `k` vocabulary words closest to `query` (a word, or a sentence if
    /// it contains whitespace).
    pub fn neighbors(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let estimate = if query.split_whitespace().count() > 1 {
            self.sentence(query)?.estimate().clone()
        } else {
            let id = self.word_id(query.trim())?;
            self.store.get(id).expect("id from vocabulary").clone()
        };
        let candidates: Vec<usize> = (0..self.vocab.len()).collect();
        let ranked = cmd::nearest_neighbors(&estimate, &candidates, k.min(candidates.len()), &self.store, &self.space, &self.sinkhorn)?;
        Ok(ranked
            .into_iter()
            .map(|(w, d)| (self.vocab.token(w).expect("candidate id").to_string(), d))
            .collect())
    }
}
