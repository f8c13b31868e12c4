use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{generate_scene, Sample, SceneSpec};
use crate::config::ExperimentConfig;
use crate::pgm::Pgm;
use crate::{Error, Result};

const MANIFEST: &str = "manifest.txt";
const PAIRS_HEADER: &str = "[pairs]";

/// Contents of a dataset directory's `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub spec: SceneSpec,
    /// `(image file, label file, generating seed)` relative to the directory.
    pub pairs: Vec<(String, String, u64)>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let cfg = ExperimentConfig {
            scene: self.spec.clone(),
            ..ExperimentConfig::default()
        };
        let ini = cfg.to_ini();
        let scene_part = ini.split("\n[network]").next().unwrap_or("");
        let mut out = String::from("# nestseg dataset\n");
        out.push_str(scene_part.trim_end());
        out.push_str("\n\n");
        out.push_str(PAIRS_HEADER);
        out.push('\n');
        for (image, label, seed) in &self.pairs {
            let _ = writeln!(out, "{image} {label} {seed}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (head, pairs) = match text.find(&format!("\n{PAIRS_HEADER}")) {
            Some(pos) => (&text[..pos], &text[pos + PAIRS_HEADER.len() + 1..]),
            None => return Err(Error::Format(format!("manifest lacks a {PAIRS_HEADER} section"))),
        };
        let spec = ExperimentConfig::parse_unchecked(head)?.scene;
        spec.validate()?;
        let pairs = pairs
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let parts: Vec<&str> = l.split_whitespace().collect();
                match parts.as_slice() {
                    [image, label, seed] => seed
                        .parse()
                        .map(|s| (image.to_string(), label.to_string(), s))
                        .map_err(|_| Error::Format(format!("bad seed in manifest line `{l}`"))),
                    _ => Err(Error::Format(format!("manifest line `{l}` needs IMAGE LABEL SEED"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, pairs })
    }
}

/// Generates `seeds.len()` scenes and writes them under `dir`: a 16-bit PGM per
/// image, an 8-bit PGM of class indices per label, and `manifest.txt`.
pub fn export_dataset(spec: &SceneSpec, seeds: &[u64], dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let sample = generate_scene(spec, seed)?;
        let (image, label) = (format!("image_{i:03}.pgm"), format!("label_{i:03}.pgm"));
        Pgm::from_unit_reals(sample.width(), sample.height(), &sample.image)?.save(&dir.join(&image))?;
        Pgm::from_labels(&sample.label).save(&dir.join(&label))?;
        pairs.push((image, label, seed));
    }
    let manifest = Manifest {
        spec: spec.clone(),
        pairs,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a directory written by [`export_dataset`]. Images come back
/// quantized to 16 bits.
pub fn import_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let path: PathBuf = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::parse(&text)?;
    let samples = manifest
        .pairs
        .iter()
        .map(|(image, label, _)| {
            let img = Pgm::load(&dir.join(image))?;
            let lab = Pgm::load(&dir.join(label))?;
            if (img.width, img.height) != (lab.width, lab.height) {
                return Err(Error::Format(format!("{image} and {label} differ in size")));
            }
            Ok(Sample {
                image: img.to_unit_reals(),
                label: lab.to_labels(manifest.spec.m)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, samples))
}
