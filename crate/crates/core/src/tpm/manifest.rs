use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PCR_COUNT;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("component `{name}` ({kind}) must be measured into PCR {required}, not {actual}")]
    FixedIndex {
        name: String,
        kind: ComponentKind,
        required: usize,
        actual: usize,
    },
    #[error("component `{name}` uses PCR {index}, out of range")]
    IndexOutOfRange { name: String, index: usize },
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("component `{0}` needs exactly one of image_text, image_hex, image_file")]
    ImageSource(String),
    #[error("cannot read image `{path}`: {reason}")]
    ImageFile { path: String, reason: String },
    #[error("no component of kind {0} to tamper")]
    NoSuchComponent(ComponentKind),
    #[error("byte {byte} outside image of length {len}")]
    ByteOutOfRange { byte: usize, len: usize },
    #[error("bad golden PCR entry `{0}` (expected index:hex)")]
    Golden(String),
}

/// Boot stages of the trusted platform boot sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Crtm,
    BiosRest,
    BoardConfig,
    RomFirmware,
    RomFirmwareConfig,
    OsLoader,
    OsCode,
    Application,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 8] = [
        ComponentKind::Crtm,
        ComponentKind::BiosRest,
        ComponentKind::BoardConfig,
        ComponentKind::RomFirmware,
        ComponentKind::RomFirmwareConfig,
        ComponentKind::OsLoader,
        ComponentKind::OsCode,
        ComponentKind::Application,
    ];

    /// Indices 0-3 are fixed by the boot sequence; the rest are defaults.
    pub fn fixed_index(self) -> Option<usize> {
        match self {
            ComponentKind::Crtm | ComponentKind::BiosRest => Some(0),
            ComponentKind::BoardConfig => Some(1),
            ComponentKind::RomFirmware => Some(2),
            ComponentKind::RomFirmwareConfig => Some(3),
            _ => None,
        }
    }

    pub fn default_index(self) -> usize {
        match self {
            ComponentKind::OsLoader => 4,
            ComponentKind::OsCode => 5,
            ComponentKind::Application => 8,
            fixed => fixed.fixed_index().expect("fixed kinds have an index"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Crtm => "crtm",
            ComponentKind::BiosRest => "bios-rest",
            ComponentKind::BoardConfig => "board-config",
            ComponentKind::RomFirmware => "rom-firmware",
            ComponentKind::RomFirmwareConfig => "rom-firmware-config",
            ComponentKind::OsLoader => "os-loader",
            ComponentKind::OsCode => "os-code",
            ComponentKind::Application => "application",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootComponent {
    pub kind: ComponentKind,
    pub name: String,
    pub image: Vec<u8>,
    pub pcr_index: usize,
}

/// Ordered list of components measured at boot.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BootManifest {
    components: Vec<BootComponent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default, rename = "component")]
    components: Vec<ComponentEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentEntry {
    kind: ComponentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_hex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pcr: Option<usize>,
}

impl BootManifest {
    pub fn new(components: Vec<BootComponent>) -> Self {
        BootManifest { components }
    }

    /// All eight stages at their default indices, with synthetic images
    /// derived from `label`.
    pub fn reference(label: &str) -> Self {
        let components = ComponentKind::ALL
            .iter()
            .map(|&kind| BootComponent {
                kind,
                name: kind.as_str().to_string(),
                image: format!("{label}/{kind}/image-v1").into_bytes(),
                pcr_index: kind.default_index(),
            })
            .collect();
        BootManifest { components }
    }

    pub fn components(&self) -> &[BootComponent] {
        &self.components
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        for c in &self.components {
            if c.pcr_index >= PCR_COUNT {
                return Err(ManifestError::IndexOutOfRange {
                    name: c.name.clone(),
                    index: c.pcr_index,
                });
            }
            if let Some(required) = c.kind.fixed_index() {
                if c.pcr_index != required {
                    return Err(ManifestError::FixedIndex {
                        name: c.name.clone(),
                        kind: c.kind,
                        required,
                        actual: c.pcr_index,
                    });
                }
            }
        }
        Ok(())
    }

    /// Distinct PCR indices touched by this manifest, ascending.
    pub fn indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.components.iter().map(|c| c.pcr_index).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Flips the low bit of `byte` in the first image of `kind`.
    pub fn tamper_image(&mut self, kind: ComponentKind, byte: usize) -> Result<(), ManifestError> {
        let c = self
            .components
            .iter_mut()
            .find(|c| c.kind == kind)
            .ok_or(ManifestError::NoSuchComponent(kind))?;
        let len = c.image.len();
        let b = c
            .image
            .get_mut(byte)
            .ok_or(ManifestError::ByteOutOfRange { byte, len })?;
        *b ^= 0x01;
        Ok(())
    }

    /// Parses the TOML manifest format. `image_file` paths resolve against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ManifestError> {
        let file: ManifestFile =
            toml::from_str(text).map_err(|e| ManifestError::Parse(e.message().to_string()))?;
        let mut components = Vec::with_capacity(file.components.len());
        for e in file.components {
            let name = e.name.unwrap_or_else(|| e.kind.as_str().to_string());
            let image = match (e.image_text, e.image_hex, e.image_file) {
                (Some(t), None, None) => t.into_bytes(),
                (None, Some(h), None) => {
                    hex::decode(h.trim()).map_err(|err| ManifestError::Parse(err.to_string()))?
                }
                (None, None, Some(p)) => {
                    let path = base_dir.join(&p);
                    std::fs::read(&path).map_err(|err| ManifestError::ImageFile {
                        path: path.display().to_string(),
                        reason: err.to_string(),
                    })?
                }
                _ => return Err(ManifestError::ImageSource(name)),
            };
            components.push(BootComponent {
                kind: e.kind,
                pcr_index: e.pcr.unwrap_or_else(|| e.kind.default_index()),
                name,
                image,
            });
        }
        let manifest = BootManifest { components };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|e| ManifestError::ImageFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Serializes with inline hex images.
    pub fn to_toml(&self) -> String {
        let file = ManifestFile {
            components: self
                .components
                .iter()
                .map(|c| ComponentEntry {
                    kind: c.kind,
                    name: Some(c.name.clone()),
                    image_text: None,
                    image_hex: Some(hex::encode(&c.image)),
                    image_file: None,
                    pcr: Some(c.pcr_index),
                })
                .collect(),
        };
        toml::to_string(&file).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_manifest_layout() {
        let m = BootManifest::reference("x");
        m.validate().unwrap();
        assert_eq!(m.indices(), vec![0, 1, 2, 3, 4, 5, 8]);
    }

    #[test]
    fn fixed_index_enforced() {
        let text = r#"
            [[component]]
            kind = "board-config"
            image_text = "board"
            pcr = 2
        "#;
        assert!(matches!(
            BootManifest::from_toml_str(text, Path::new(".")),
            Err(ManifestError::FixedIndex { required: 1, actual: 2, .. })
        ));
    }

    #[test]
    fn configurable_os_indices_and_sources() {
        let text = r#"
            [[component]]
            kind = "crtm"
            image_hex = "00ff"

            [[component]]
            kind = "os-code"
            name = "rtos"
            image_text = "kernel"
            pcr = 12
        "#;
        let m = BootManifest::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(m.components()[0].image, vec![0x00, 0xff]);
        assert_eq!(m.components()[1].pcr_index, 12);
        assert_eq!(m.components()[1].name, "rtos");
    }

    #[test]
    fn image_source_must_be_unique() {
        let text = r#"
            [[component]]
            kind = "crtm"
            image_text = "a"
            image_hex = "00"
        "#;
        assert!(matches!(
            BootManifest::from_toml_str(text, Path::new(".")),
            Err(ManifestError::ImageSource(_))
        ));
    }

    #[test]
    fn unknown_kind_is_parse_error() {
        let text = "[[component]]\nkind = \"gpu\"\nimage_text = \"a\"\n";
        assert!(matches!(
            BootManifest::from_toml_str(text, Path::new(".")),
            Err(ManifestError::Parse(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        let m = BootManifest::reference("rt");
        let back = BootManifest::from_toml_str(&m.to_toml(), Path::new(".")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tamper_errors() {
        let mut m = BootManifest::new(Vec::new());
        assert!(m.tamper_image(ComponentKind::OsCode, 0).is_err());
        let mut m = BootManifest::reference("x");
        assert!(matches!(
            m.tamper_image(ComponentKind::OsCode, 10_000),
            Err(ManifestError::ByteOutOfRange { .. })
        ));
    }
}
