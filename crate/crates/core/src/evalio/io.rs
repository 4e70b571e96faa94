//! Image and label-map files plus the dataset manifest.
//!
//! Images are binary PPM/PGM or PNG, detected from the leading bytes. Label maps
//! are 8-bit single-channel images whose pixel value is the class id.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::pipeline::LabelMap;
use crate::pnm::Raster;
use crate::spgraph::ImagePlane;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(0, format!("PNG decode failed: {e}")))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, data) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        Raster::decode(&bytes)
    };
    raster.map_err(|e| e.in_file(path))
}

/// Loads an image with 8-bit values scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImagePlane> {
    let r = read_raster(path)?;
    ImagePlane::from_raster(&r).map_err(|e| e.in_file(path))
}

/// Writes an image as PPM (RGB) or PGM (gray).
pub fn save_image(path: &Path, image: &ImagePlane) -> Result<()> {
    write_raster(path, &image.to_raster())
}

pub(crate) fn write_raster(path: &Path, r: &Raster) -> Result<()> {
    std::fs::write(path, r.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let r = read_raster(path)?;
    if r.channels != 1 {
        return Err(Error::invalid(format!("label map must be single-channel, found {} channels", r.channels))
            .in_file(path));
    }
    LabelMap::new(r.height, r.width, r.data).map_err(|e| e.in_file(path))
}

pub fn save_labelmap(path: &Path, labels: &LabelMap) -> Result<()> {
    let r = Raster {
        width: labels.width(),
        height: labels.height(),
        channels: 1,
        data: labels.as_slice().to_vec(),
    };
    write_raster(path, &r)
}

/// Image/label path pairs plus class names.
///
/// On disk: one `image<TAB>label` line per entry, relative paths resolved against
/// the manifest's directory, and a `# classes: name0 name1 ...` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut class_names = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(c) = t.strip_prefix('#') {
                if let Some(names) = c.trim().strip_prefix("classes:") {
                    class_names = names.split_whitespace().map(str::to_string).collect();
                }
                continue;
            }
            let (img, lab) = line
                .split_once('\t')
                .ok_or_else(|| Error::invalid(format!("manifest line {}: expected image<TAB>label", i + 1)))?;
            entries.push((base_dir.join(img.trim()), base_dir.join(lab.trim())));
        }
        ensure(class_names.len() >= 2, || {
            "manifest needs a '# classes: ...' line naming at least two classes".into()
        })?;
        ensure(!entries.is_empty(), || "manifest lists no images".into())?;
        Ok(Self { entries, class_names })
    }

    /// Reads a manifest and checks every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base).map_err(|e| e.in_file(path))?;
        for (img, lab) in &m.entries {
            for p in [img, lab] {
                if !p.is_file() {
                    return Err(Error::invalid(format!("listed file {} does not exist", p.display())).in_file(path));
                }
            }
        }
        Ok(m)
    }

    /// Manifest text with paths made relative to `base_dir` where possible.
    pub fn to_text(&self, base_dir: &Path) -> String {
        let mut s = format!("# classes: {}\n", self.class_names.join(" "));
        for (img, lab) in &self.entries {
            let rel = |p: &Path| p.strip_prefix(base_dir).unwrap_or(p).display().to_string();
            writeln!(s, "{}\t{}", rel(img), rel(lab)).unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    /// Loads entry `i`, checking dimensions and class ids.
    pub fn load_entry(&self, i: usize) -> Result<(ImagePlane, LabelMap)> {
        let (ip, lp) = &self.entries[i];
        let img = load_image(ip)?;
        let lab = load_labels(lp)?;
        ensure(img.height() == lab.height() && img.width() == lab.width(), || {
            format!(
                "{} is {}x{} but {} is {}x{}",
                ip.display(),
                img.height(),
                img.width(),
                lp.display(),
                lab.height(),
                lab.width()
            )
        })?;
        lab.check_classes(self.classes()).map_err(|e| e.in_file(lp))?;
        Ok((img, lab))
    }
}
