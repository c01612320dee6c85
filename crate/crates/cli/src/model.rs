//! A network with its anchors and class list, plus checkpoint files.
//!
//! A checkpoint is `<name>.ckpt` (named tensors: parameters, then optimizer
//! state) with a `<name>.meta` sidecar holding the configuration, anchors
//! and training position as `key=value` text.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use hifi_core::detect::{decode_and_nms, Anchors, Detection};
use hifi_core::hifinet::{HifiNet, ModelConfig, ModelInput};
use hifi_core::kv::KvMap;
use hifi_core::nncore::checkpoint::{read_tensors, write_tensors};
use hifi_core::nncore::{AdamW, Graph, ParamStore, Tensor};
use hifi_core::sigsynth::ModScheme;
use hifi_core::{Error, Result};

pub struct Detector {
    pub net: HifiNet,
    pub store: ParamStore<f32>,
    pub anchors: Anchors,
    pub classes: Vec<ModScheme>,
}

impl Detector {
    pub fn new(cfg: ModelConfig, anchors: Anchors, classes: Vec<ModScheme>, seed: u64) -> Result<Self> {
        if cfg.num_classes != classes.len() {
            return Err(Error::Config(format!("model has {} classes, {} named", cfg.num_classes, classes.len())));
        }
        anchors.validate(cfg.strides().len(), cfg.num_anchors)?;
        let mut store = ParamStore::new();
        let net = HifiNet::new(cfg, &mut store, seed)?;
        Ok(Detector { net, store, anchors, classes })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn input(&self, spectrogram: &Array2<f32>) -> Result<ModelInput<f32>> {
        Ok(ModelInput::from_spectrogram(spectrogram, self.cfg())?.cast())
    }

    /// Detections with network-local class indices.
    pub fn detect(&self, input: &ModelInput<f32>, conf: f64, iou: f64) -> Result<Vec<Detection>> {
        let mut g = Graph::with_params(&self.store);
        let out = self.net.forward(&mut g, input)?;
        let scales: Vec<(&Tensor<f32>, &Tensor<f32>)> =
            out.scales.iter().map(|s| (g.value(s.reg), g.value(s.cls))).collect();
        decode_and_nms(&scales, &self.anchors, conf, iou)
    }

    /// Maps network-local class indices to modulation class ids.
    pub fn to_scheme_ids(&self, mut dets: Vec<Detection>) -> Vec<Detection> {
        for d in &mut dets {
            d.class_id = self.classes[d.class_id].class_id();
        }
        dets
    }

    pub fn meta(&self) -> KvMap {
        let mut kv = self.cfg().to_kv();
        kv.set("anchors", &self.anchors);
        kv.set("classes", self.classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(","));
        kv
    }

    /// Writes `path` and its `.meta` sidecar; `extra` is merged into the meta.
    pub fn save(&self, path: &Path, opt: Option<&AdamW<f32>>, extra: &KvMap) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let state = opt.map(|o| o.state_tensors(&self.store)).unwrap_or_default();
        let tensors = self.store.iter().chain(state.iter().map(|(n, t)| (n.as_str(), t)));
        let mut w = BufWriter::new(fs::File::create(path)?);
        write_tensors(&mut w, tensors)?;
        std::io::Write::flush(&mut w)?;
        let mut meta = self.meta();
        meta.merge(extra);
        fs::write(meta_path(path), meta.to_text())?;
        Ok(())
    }
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("meta")
}

/// A checkpoint read back from disk.
pub struct Loaded {
    pub detector: Detector,
    pub meta: KvMap,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl Loaded {
    /// Restores the optimizer state saved alongside the parameters.
    pub fn restore_optimizer(&self, opt: &mut AdamW<f32>) -> Result<()> {
        let lookup = |name: &str| self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
        if opt.load_state(&self.detector.store, lookup) {
            Ok(())
        } else {
            Err(Error::Format("checkpoint carries no optimizer state".into()))
        }
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    if !path.is_file() {
        return Err(Error::InvalidInput(format!("checkpoint not found: {}", path.display())));
    }
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file)
        .map_err(|e| Error::InvalidInput(format!("checkpoint metadata {} unreadable: {e}", meta_file.display())))?;
    let meta = KvMap::parse(&meta_text)?;
    let cfg = ModelConfig::desk().apply_kv(&meta)?;
    let anchors: Anchors = meta.require::<String>("anchors")?.parse()?;
    let classes = meta
        .get("classes")
        .ok_or_else(|| Error::Format("checkpoint metadata lacks classes".into()))?
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<ModScheme>>>()?;
    let mut detector = Detector::new(cfg, anchors, classes, 0)?;
    let tensors: Vec<(String, Tensor<f32>)> = read_tensors(BufReader::new(fs::File::open(path)?))?;
    detector.store.load_named(tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
    Ok(Loaded { detector, meta, tensors })
}
