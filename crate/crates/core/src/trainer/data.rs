use crate::error::{Error, Result};
use crate::features::{read_fmap, read_wav, AudioClip, FeatureExtractor, FeatureMap};

use super::manifest::{DatasetManifest, Split};

/// Raw waveform kept alongside its features so that waveform
/// augmentations can re-extract.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub clip_id: String,
    pub scene: usize,
    pub device: String,
    pub features: FeatureMap,
    pub audio: Option<AudioClip>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Loads the rows of `split` (all rows when `None`). Feature files are
    /// read directly; WAV rows are extracted with `extractor`.
    pub fn load(manifest: &DatasetManifest, split: Option<Split>, extractor: Option<&FeatureExtractor>) -> Result<Self> {
        let examples = manifest
            .rows_in(split)
            .into_iter()
            .map(|row| {
                let (features, audio) = if row.is_audio() {
                    let ex = extractor.ok_or_else(|| {
                        Error::Config(format!("{} is audio; a feature configuration is required", row.clip_id))
                    })?;
                    let clip = read_wav(&row.path, row.clip_id.clone())?;
                    (ex.extract(&clip)?, Some(clip))
                } else {
                    (read_fmap(&row.path, row.clip_id.clone())?, None)
                };
                Ok(Example { clip_id: row.clip_id.clone(), scene: row.scene, device: row.device.clone(), features, audio })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { examples })
    }

    /// Feature-only examples with device `"a"`.
    pub fn from_features(items: Vec<(FeatureMap, usize)>) -> Self {
        let examples = items
            .into_iter()
            .map(|(features, scene)| Example {
                clip_id: features.clip_id.clone(),
                scene,
                device: "a".into(),
                features,
                audio: None,
            })
            .collect();
        Self { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.clip_id.as_str())
    }

    pub fn feature_maps(&self) -> impl Iterator<Item = &FeatureMap> {
        self.examples.iter().map(|e| &e.features)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { examples: indices.iter().map(|&i| self.examples[i].clone()).collect() }
    }
}
