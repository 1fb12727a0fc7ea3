//! On-disk dataset layouts.
//!
//! * CIFAR10 binary (`data_batch_{1..5}.bin`, `test_batch.bin`)
//! * STL10 binary (`{train,test}_X.bin`, `{train,test}_y.bin`, `unlabeled_X.bin`)
//! * Tiny-ImageNet (`train/<wnid>/images/*.JPEG`, `val/images` + `val_annotations.txt`)
//! * a generic directory of images, one sub-directory per class (optional)
//!
//! Every loader resizes to the requested resolution with bilinear sampling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::InMemoryDataset;
use super::image::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Train,
    Test,
    /// STL10 only.
    Unlabeled,
}

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Decodes CIFAR10 binary records (label byte + planar RGB).
pub fn parse_cifar10_records(bytes: &[u8]) -> Result<(Vec<u8>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Dataset(format!("CIFAR10 batch of {} bytes is not a multiple of {CIFAR_RECORD}", bytes.len())));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut pixels = Vec::with_capacity(bytes.len() / CIFAR_RECORD * 3 * plane);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for rec in bytes.chunks(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::Dataset(format!("CIFAR10 label {} out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        let data = &rec[1..];
        for i in 0..plane {
            pixels.extend_from_slice(&[data[i], data[plane + i], data[2 * plane + i]]);
        }
    }
    Ok((pixels, labels))
}

fn resize_all(pixels: Vec<u8>, side_h: usize, side_w: usize, out: (usize, usize)) -> Result<Vec<u8>> {
    if (side_h, side_w) == out {
        return Ok(pixels);
    }
    let per = side_h * side_w * 3;
    let mut resized = Vec::with_capacity(pixels.len() / per * out.0 * out.1 * 3);
    for chunk in pixels.chunks(per) {
        let img = ImageTensor::from_u8(side_h, side_w, 3, chunk)?;
        resized.extend(img.resize_bilinear(out.0, out.1).to_u8());
    }
    Ok(resized)
}

pub fn load_cifar10(root: &Path, subset: Subset, resolution: (usize, usize)) -> Result<InMemoryDataset> {
    let files: Vec<PathBuf> = match subset {
        Subset::Train => (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
        Subset::Test => vec![root.join("test_batch.bin")],
        Subset::Unlabeled => return Err(Error::Dataset("CIFAR10 has no unlabeled subset".into())),
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::Dataset(format!("{}: {e}", f.display())))?;
        let (p, l) = parse_cifar10_records(&bytes)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let pixels = resize_all(pixels, CIFAR_SIDE, CIFAR_SIDE, resolution)?;
    InMemoryDataset::new(format!("cifar10-{subset:?}").to_lowercase(), resolution.0, resolution.1, pixels, Some(labels))
}

const STL_SIDE: usize = 96;

/// Decodes STL10 `*_X.bin`: planar channels, each stored column-major.
pub fn parse_stl10_images(bytes: &[u8]) -> Result<Vec<u8>> {
    let plane = STL_SIDE * STL_SIDE;
    let per = 3 * plane;
    if bytes.len() % per != 0 {
        return Err(Error::Dataset(format!("STL10 image file of {} bytes is not a multiple of {per}", bytes.len())));
    }
    let mut pixels = Vec::with_capacity(bytes.len());
    for rec in bytes.chunks(per) {
        for y in 0..STL_SIDE {
            for x in 0..STL_SIDE {
                for c in 0..3 {
                    pixels.push(rec[c * plane + x * STL_SIDE + y]);
                }
            }
        }
    }
    Ok(pixels)
}

pub fn load_stl10(root: &Path, subset: Subset, resolution: (usize, usize)) -> Result<InMemoryDataset> {
    let (xf, yf) = match subset {
        Subset::Train => ("train_X.bin", Some("train_y.bin")),
        Subset::Test => ("test_X.bin", Some("test_y.bin")),
        Subset::Unlabeled => ("unlabeled_X.bin", None),
    };
    let read = |name: &str| {
        let p = root.join(name);
        fs::read(&p).map_err(|e| Error::Dataset(format!("{}: {e}", p.display())))
    };
    let pixels = parse_stl10_images(&read(xf)?)?;
    let labels = match yf {
        Some(y) => Some(
            read(y)?
                .into_iter()
                .map(|b| {
                    if (1..=10).contains(&b) {
                        Ok(b as usize - 1)
                    } else {
                        Err(Error::Dataset(format!("STL10 label {b} out of range")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let pixels = resize_all(pixels, STL_SIDE, STL_SIDE, resolution)?;
    InMemoryDataset::new(format!("stl10-{subset:?}").to_lowercase(), resolution.0, resolution.1, pixels, labels)
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

/// Reads one image file as an RGB tensor.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?.to_rgb8();
    ImageTensor::from_u8(img.height() as usize, img.width() as usize, 3, img.as_raw())
}

pub fn load_tiny_imagenet(root: &Path, subset: Subset, resolution: (usize, usize)) -> Result<InMemoryDataset> {
    let mut wnids: Vec<String> = sorted_entries(&root.join("train"))?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .collect();
    wnids.sort();
    let class_of: BTreeMap<&str, usize> = wnids.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut files = Vec::new();
    match subset {
        Subset::Train => {
            for (i, wnid) in wnids.iter().enumerate() {
                for f in sorted_entries(&root.join("train").join(wnid).join("images"))? {
                    if is_image_file(&f) {
                        files.push((f, i));
                    }
                }
            }
        }
        Subset::Test => {
            let ann = fs::read_to_string(root.join("val").join("val_annotations.txt"))?;
            for line in ann.lines() {
                let mut parts = line.split('\t');
                let (Some(file), Some(wnid)) = (parts.next(), parts.next()) else { continue };
                let class = *class_of
                    .get(wnid)
                    .ok_or_else(|| Error::Dataset(format!("unknown wnid {wnid} in val annotations")))?;
                files.push((root.join("val").join("images").join(file), class));
            }
        }
        Subset::Unlabeled => return Err(Error::Dataset("Tiny-ImageNet has no unlabeled subset".into())),
    }
    load_files(&format!("tiny-imagenet-{subset:?}").to_lowercase(), &files, resolution, true)
}

fn load_files(name: &str, files: &[(PathBuf, usize)], resolution: (usize, usize), labeled: bool) -> Result<InMemoryDataset> {
    let mut pixels = Vec::with_capacity(files.len() * resolution.0 * resolution.1 * 3);
    let mut labels = Vec::with_capacity(files.len());
    for (path, class) in files {
        pixels.extend(read_image(path)?.resize_bilinear(resolution.0, resolution.1).to_u8());
        labels.push(*class);
    }
    InMemoryDataset::new(name, resolution.0, resolution.1, pixels, labeled.then_some(labels))
}

/// Loads every PNG/JPEG under `root`. Images directly in `root` are
/// unlabeled; when `root` only has sub-directories, each one is a class (in
/// sorted name order).
pub fn load_image_dir(root: &Path, resolution: (usize, usize)) -> Result<InMemoryDataset> {
    let entries = sorted_entries(root)?;
    let subdirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    let loose: Vec<&PathBuf> = entries.iter().filter(|p| is_image_file(p)).collect();
    let name = root.file_name().and_then(|n| n.to_str()).unwrap_or("images").to_string();
    if !subdirs.is_empty() && loose.is_empty() {
        let mut files = Vec::new();
        for (class, dir) in subdirs.iter().enumerate() {
            for f in sorted_entries(dir)? {
                if is_image_file(&f) {
                    files.push((f, class));
                }
            }
        }
        load_files(&name, &files, resolution, true)
    } else {
        let files: Vec<(PathBuf, usize)> = loose.into_iter().map(|p| (p.clone(), 0)).collect();
        load_files(&name, &files, resolution, false)
    }
}

/// Writes an image as 8-bit PNG.
pub fn write_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let rgb = img.clone().into_rgb();
    let buf = image::RgbImage::from_raw(rgb.width() as u32, rgb.height() as u32, rgb.to_u8())
        .ok_or_else(|| Error::InvalidImage("buffer size mismatch".into()))?;
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn cifar_records_are_deplanarized() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(10u8, 1024));
        rec.extend(std::iter::repeat_n(20u8, 1024));
        rec.extend(std::iter::repeat_n(30u8, 1024));
        let (px, labels) = parse_cifar10_records(&rec).unwrap();
        assert_eq!(labels, vec![3]);
        assert_eq!(&px[..6], &[10, 20, 30, 10, 20, 30]);
        assert!(parse_cifar10_records(&rec[..100]).is_err());
    }

    #[test]
    fn stl_images_are_transposed() {
        let plane = 96 * 96;
        let mut rec = vec![0u8; 3 * plane];
        // column-major: (x=1, y=0) lives at index 1 * 96 + 0.
        rec[96] = 200;
        let px = parse_stl10_images(&rec).unwrap();
        assert_eq!(px[3], 200, "pixel (y=0, x=1), red");
        assert_eq!(px[0], 0);
    }

    #[test]
    fn cifar_loader_reads_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        std::fs::write(dir.path().join("test_batch.bin"), &rec).unwrap();
        let ds = load_cifar10(dir.path(), Subset::Test, (16, 16)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), Some(7));
        assert_eq!(ds.image(0).unwrap().dims(), (16, 16, 3));
    }

    #[test]
    fn image_dir_with_class_folders() {
        let dir = tempfile::tempdir().unwrap();
        for (class, shade) in [("a", 0.2f32), ("b", 0.8)] {
            std::fs::create_dir(dir.path().join(class)).unwrap();
            write_png(&ImageTensor::filled(5, 7, [shade; 3]), &dir.path().join(class).join("x.png")).unwrap();
        }
        let ds = load_image_dir(dir.path(), (4, 4)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label(1), Some(1));
        assert!((ds.image(1).unwrap().get(0, 0, 0) - 0.8).abs() < 0.01);
    }
}
