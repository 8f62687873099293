use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::CropSpec;
use super::trial::Embodiment;
use crate::class::ContactClass;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const FLAG_IMAGE_MISSING: &str = "image-missing";
pub const FLAG_AUGMENTED: &str = "augmented";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::param("split", format!("unknown split `{s}`"))),
        }
    }
}

/// The frame paired with a window and how to crop it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Path relative to the trial directory.
    pub frame: String,
    pub timestamp_ns: i64,
    pub crop: CropSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub trial_id: String,
    pub segment_index: usize,
    pub window_start_s: f64,
    pub window_len_s: f64,
    pub label: ContactClass,
    pub image_ref: Option<ImageRef>,
    pub split: Split,
    pub embodiment: Embodiment,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl SampleRecord {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    pub fn window_end_s(&self) -> f64 {
        self.window_start_s + self.window_len_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub leaf: usize,
    pub twig: usize,
    pub trunk: usize,
    pub ambient: usize,
}

impl ClassCounts {
    pub fn of<'a>(records: impl IntoIterator<Item = &'a SampleRecord>) -> Self {
        let mut c = ClassCounts::default();
        for r in records {
            *c.get_mut(r.label) += 1;
        }
        c
    }

    pub fn get(&self, class: ContactClass) -> usize {
        match class {
            ContactClass::Leaf => self.leaf,
            ContactClass::Twig => self.twig,
            ContactClass::Trunk => self.trunk,
            ContactClass::Ambient => self.ambient,
        }
    }

    fn get_mut(&mut self, class: ContactClass) -> &mut usize {
        match class {
            ContactClass::Leaf => &mut self.leaf,
            ContactClass::Twig => &mut self.twig,
            ContactClass::Trunk => &mut self.trunk,
            ContactClass::Ambient => &mut self.ambient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub feature_params_fingerprint: String,
    pub class_counts: ClassCounts,
}

/// Dataset manifest: a header line followed by one record per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(fingerprint: String, samples: Vec<SampleRecord>) -> Self {
        Manifest {
            header: ManifestHeader {
                schema_version: SCHEMA_VERSION,
                feature_params_fingerprint: fingerprint,
                class_counts: ClassCounts::of(&samples),
            },
            samples,
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.header)?;
        s.push('\n');
        for r in &self.samples {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::format("manifest", "missing header line"))?;
        let header: ManifestHeader = serde_json::from_str(first)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported schema version {}", header.schema_version),
            ));
        }
        let samples = lines
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<SampleRecord>>>()?;
        let m = Manifest { header, samples };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::atomic_write(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
        Self::from_jsonl(&text).map_err(|e| e.at(path))
    }

    /// Unique ids, consistent class counts, and no trial in two splits.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for r in &self.samples {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::format(
                    "manifest",
                    format!("duplicate sample id `{}`", r.sample_id),
                ));
            }
        }
        if ClassCounts::of(&self.samples) != self.header.class_counts {
            return Err(Error::format(
                "manifest",
                "class_counts do not match samples",
            ));
        }
        if let Some(t) = self.leaked_trials().into_iter().next() {
            return Err(Error::format(
                "manifest",
                format!("trial `{t}` appears in more than one split"),
            ));
        }
        Ok(())
    }

    /// Trials whose samples span more than one split.
    pub fn leaked_trials(&self) -> Vec<String> {
        let mut splits: BTreeMap<&str, Split> = BTreeMap::new();
        let mut leaked = std::collections::BTreeSet::new();
        for r in &self.samples {
            match splits.get(r.trial_id.as_str()) {
                Some(&s) if s != r.split => {
                    leaked.insert(r.trial_id.clone());
                }
                None => {
                    splits.insert(&r.trial_id, r.split);
                }
                _ => {}
            }
        }
        leaked.into_iter().collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |r| r.split == split)
    }

    pub fn flag_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for f in self.samples.iter().flat_map(|r| &r.flags) {
            *out.entry(f.clone()).or_insert(0) += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, trial: &str, split: Split, label: ContactClass) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            trial_id: trial.into(),
            segment_index: 0,
            window_start_s: 0.1 + 0.2,
            window_len_s: 0.8,
            label,
            image_ref: Some(ImageRef {
                frame: "frames/1.png".into(),
                timestamp_ns: 1,
                crop: CropSpec::default(),
            }),
            split,
            embodiment: Embodiment::Probe,
            flags: vec![],
        }
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let m = Manifest::new(
            "abc".into(),
            vec![
                rec("a", "t1", Split::Train, ContactClass::Leaf),
                rec("b", "t2", Split::Val, ContactClass::Ambient),
            ],
        );
        let text = m.to_jsonl().unwrap();
        let back = Manifest::from_jsonl(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl().unwrap(), text);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(m.header.class_counts.leaf, 1);
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = Manifest::new("x".into(), vec![]);
        assert_eq!(Manifest::from_jsonl(&m.to_jsonl().unwrap()).unwrap(), m);
    }

    #[test]
    fn leakage_and_duplicates_detected() {
        let m = Manifest::new(
            "x".into(),
            vec![
                rec("a", "t1", Split::Train, ContactClass::Leaf),
                rec("b", "t1", Split::Val, ContactClass::Leaf),
            ],
        );
        assert_eq!(m.leaked_trials(), vec!["t1".to_string()]);
        assert!(Manifest::from_jsonl(&m.to_jsonl().unwrap()).is_err());
        let d = Manifest::new(
            "x".into(),
            vec![
                rec("a", "t1", Split::Train, ContactClass::Leaf),
                rec("a", "t2", Split::Train, ContactClass::Leaf),
            ],
        );
        assert!(d.validate().is_err());
    }
}
