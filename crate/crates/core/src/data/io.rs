use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Image;

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut v: Vec<_> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px[c]) / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

/// Reads `root/<class>/*.png`. Classes are numbered by sorted directory name;
/// every image becomes 3-channel RGB in [0, 1].
pub fn load_image_dir(root: &Path) -> Result<Dataset> {
    let class_dirs: Vec<_> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class subdirectories", root.display())));
    }
    let (mut images, mut labels, mut names, mut class_names) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (label, dir) in class_dirs.iter().enumerate() {
        let class = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let files: Vec<_> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_png(p)).collect();
        if files.is_empty() {
            return Err(Error::Data(format!("class directory {} has no PNG files", dir.display())));
        }
        for f in files {
            images.push(read_png(&f)?);
            labels.push(label);
            names.push(format!("{class}/{}", f.file_name().unwrap_or_default().to_string_lossy()));
        }
        class_names.push(class);
    }
    Dataset::new(images, labels, names, class_names)
}

/// Writes 8-bit RGB PNGs as `root/<class>/<index>.png`. Single-channel images
/// are replicated; only the first three channels of wider images are kept.
pub fn write_image_dir(dataset: &Dataset, root: &Path) -> Result<()> {
    for class in &dataset.class_names {
        fs::create_dir_all(root.join(class))?;
    }
    for (i, (im, &label)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        let (h, w) = (im.height, im.width);
        let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(im.channels - 1);
                (im.get(c, y as usize, x as usize) * 255.0).round().clamp(0.0, 255.0) as u8
            };
            Rgb([px(0), px(1), px(2)])
        });
        let path = root.join(&dataset.class_names[label]).join(format!("{i:05}.png"));
        buf.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}
