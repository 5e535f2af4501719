//! Scene manifests and composed-scene directories.

use std::path::{Path, PathBuf};

use posedance_core::compose::{ComposedScene, PersonEntry, SceneSpec};
use posedance_core::pose::{Canvas, SimilarityTransform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::images::{read_image, read_mask, write_image, write_mask};
use crate::poses::{read_poses, write_poses};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default)]
    pub translation: [f64; 2],
    #[serde(default)]
    pub pivot: [f64; 2],
}

fn one() -> f64 {
    1.0
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            translation: [0.0; 2],
            pivot: [0.0; 2],
        }
    }
}

impl From<Placement> for SimilarityTransform {
    fn from(p: Placement) -> Self {
        SimilarityTransform {
            scale: p.scale,
            rotation: p.rotation_deg.to_radians(),
            translation: (p.translation[0], p.translation[1]),
            pivot: (p.pivot[0], p.pivot[1]),
        }
    }
}

impl From<SimilarityTransform> for Placement {
    fn from(t: SimilarityTransform) -> Self {
        Placement {
            scale: t.scale,
            rotation_deg: t.rotation.to_degrees(),
            translation: [t.translation.0, t.translation.1],
            pivot: [t.pivot.0, t.pivot.1],
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PersonManifest {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub pose: PathBuf,
    #[serde(default)]
    pub placement: Placement,
}

/// Background, persons and canvas. Relative paths resolve against the
/// manifest's directory.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    /// `[width, height]`.
    pub canvas: [usize; 2],
    pub background: PathBuf,
    #[serde(default)]
    pub persons: Vec<PersonManifest>,
    /// Scene description, encoded as the conditional embedding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl SceneManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }

    /// Reads every referenced file into a scene description.
    pub fn resolve(&self, base: &Path) -> Result<SceneSpec> {
        let at = |p: &Path| base.join(p);
        let persons = self
            .persons
            .iter()
            .map(|p| {
                let mut pose = read_poses(&at(&p.pose))?;
                if pose.len() != 1 {
                    return Err(Error::format(&at(&p.pose), "person pose file must hold exactly one skeleton"));
                }
                Ok(PersonEntry {
                    foreground: read_image(&at(&p.image))?,
                    mask: read_mask(&at(&p.mask))?,
                    base_pose: pose.remove(0),
                    placement: p.placement.clone().into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = SceneSpec {
            background: read_image(&at(&self.background))?,
            persons,
            canvas: Canvas::new(self.canvas[0], self.canvas[1]),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Loads a scene manifest and everything it references.
pub fn load_scene_spec(path: &Path) -> Result<SceneSpec> {
    let base = path.parent().unwrap_or(Path::new("."));
    SceneManifest::load(path)?.resolve(base)
}

/// Writes the images, masks and poses of `spec` next to a manifest at
/// `dir/scene.toml` and returns the manifest path.
pub fn write_scene_spec(dir: &Path, spec: &SceneSpec, prompt: Option<&str>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_image(&dir.join("background.png"), &spec.background)?;
    let mut persons = Vec::new();
    for (i, p) in spec.persons.iter().enumerate() {
        let entry = PersonManifest {
            image: format!("person_{i}.png").into(),
            mask: format!("person_{i}_mask.png").into(),
            pose: format!("person_{i}_pose.json").into(),
            placement: p.placement.into(),
        };
        write_image(&dir.join(&entry.image), &p.foreground)?;
        write_mask(&dir.join(&entry.mask), &p.mask)?;
        write_poses(&dir.join(&entry.pose), std::slice::from_ref(&p.base_pose))?;
        persons.push(entry);
    }
    let manifest = SceneManifest {
        canvas: [spec.canvas.width, spec.canvas.height],
        background: "background.png".into(),
        persons,
        prompt: prompt.map(str::to_owned),
    };
    let path = dir.join("scene.toml");
    let text = toml::to_string_pretty(&manifest).expect("scene manifests serialize");
    std::fs::write(&path, text).map_err(Error::io(&path))?;
    Ok(path)
}

/// `image.png`, `background_mask.png`, `person_<k>_mask.png`, `poses.json`.
pub fn write_composed(dir: &Path, scene: &ComposedScene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_image(&dir.join("image.png"), &scene.image)?;
    write_mask(&dir.join("background_mask.png"), &scene.background_mask)?;
    for (k, m) in scene.person_masks.iter().enumerate() {
        write_mask(&dir.join(format!("person_{k}_mask.png")), m)?;
    }
    write_poses(&dir.join("poses.json"), &scene.poses)
}

pub fn read_composed(dir: &Path) -> Result<ComposedScene> {
    let poses = read_poses(&dir.join("poses.json"))?;
    let person_masks = (0..poses.len())
        .map(|k| read_mask(&dir.join(format!("person_{k}_mask.png"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComposedScene {
        image: read_image(&dir.join("image.png"))?,
        background_mask: read_mask(&dir.join("background_mask.png"))?,
        person_masks,
        poses,
    })
}
