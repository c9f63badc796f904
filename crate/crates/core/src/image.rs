//! Images, PNG/PNM I/O, patch sampling and tensor conversion.
//!
//! Pixels are stored planar (one row-major plane per channel) as `f32`
//! intensities nominally in `[0, 1]`. Nothing in this module clamps except
//! [`Image::clamp_01`] and the quantization performed by [`save_image`].

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: String, detail: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    ChannelCount(usize),
    #[error("tensor shape {0:?} cannot be converted to an image")]
    TensorShape(Vec<usize>),
    #[error("patch {patch}x{patch} does not fit in {width}x{height} image")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("image index {index} out of range for {len} sources")]
    NoSuchImage { index: usize, len: usize },
    #[error("image shapes differ: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        lhs: (usize, usize, usize),
        rhs: (usize, usize, usize),
    },
    #[error("buffer of {len} pixels does not match {width}x{height}x{channels}")]
    BadBuffer {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::ChannelCount(channels));
        }
        if pixels.len() != width * height * channels {
            return Err(ImageError::BadBuffer {
                width,
                height,
                channels,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels]).expect("consistent size")
    }

    /// Grayscale image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(width, height, channels)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    /// Same-shape image with every sample mapped through `f`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            ..*self.shape_only()
        }
    }

    fn shape_only(&self) -> Box<Self> {
        Box::new(Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: Vec::new(),
        })
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self, ImageError> {
        self.expect_same_shape(other)?;
        Ok(Self {
            pixels: self.pixels.iter().zip(&other.pixels).map(|(&a, &b)| f(a, b)).collect(),
            ..*self.shape_only()
        })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::ShapeMismatch {
                lhs: self.dims(),
                rhs: other.dims(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, ImageError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ImageError> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Clips every sample into `[0, 1]`.
    pub fn clamp_01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                pixels.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        Self {
            width: w,
            height: h,
            channels: self.channels,
            pixels,
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    pub fn mean_abs(&self) -> f64 {
        self.pixels.iter().map(|&v| v.abs() as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Population standard deviation of all samples.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.pixels.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.pixels.len().max(1) as f64;
        var.sqrt()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// `1 x C x H x W` tensor holding the image's planes.
pub fn image_to_tensor<T: Scalar>(image: &Image) -> Tensor<T> {
    Tensor::new(
        vec![1, image.channels, image.height, image.width],
        image.pixels.iter().map(|&v| T::from_f32(v).expect("finite")).collect(),
    )
    .expect("consistent size")
}

pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> Result<Image, ImageError> {
    match *t.shape() {
        [1, c, h, w] if c == 1 || c == 3 => Image::new(
            w,
            h,
            c,
            t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        ),
        [1, c, _, _] => Err(ImageError::ChannelCount(c)),
        _ => Err(ImageError::TensorShape(t.shape().to_vec())),
    }
}

/// Stacks equally sized images into an `N x C x H x W` tensor.
pub fn images_to_batch<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>, ImageError> {
    let first = images.first().ok_or(ImageError::TensorShape(vec![0]))?;
    let mut data = Vec::with_capacity(images.len() * first.pixels.len());
    for img in images {
        first.expect_same_shape(img)?;
        data.extend(img.pixels.iter().map(|&v| T::from_f32(v).expect("finite")));
    }
    Ok(Tensor::new(vec![images.len(), first.channels, first.height, first.width], data).expect("consistent size"))
}

/// Splits an `N x C x H x W` tensor into `N` images.
pub fn batch_to_images<T: Scalar>(t: &Tensor<T>) -> Result<Vec<Image>, ImageError> {
    let n = match *t.shape() {
        [n, _, _, _] => n,
        _ => return Err(ImageError::TensorShape(t.shape().to_vec())),
    };
    (0..n)
        .map(|i| tensor_to_image(&t.batch_item(i).expect("rank 4")))
        .collect()
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn from_interleaved(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Image {
    let n = width * height;
    let mut pixels = vec![0.0f32; n * channels];
    for (i, &b) in bytes.iter().take(n * channels).enumerate() {
        let (p, c) = (i / channels, i % channels);
        pixels[c * n + p] = b as f32 / 255.0;
    }
    Image {
        width,
        height,
        channels,
        pixels,
    }
}

fn to_interleaved(image: &Image) -> Vec<u8> {
    let n = image.width * image.height;
    let mut out = vec![0u8; n * image.channels];
    for c in 0..image.channels {
        for (p, &v) in image.plane(c).iter().enumerate() {
            out[p * image.channels + c] = quantize(v);
        }
    }
    out
}

/// Loads an 8-bit PNG (gray or RGB) or binary PGM/PPM, mapping samples by `v/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(path, &bytes)
    } else {
        Err(ImageError::UnsupportedFormat(path.display().to_string()))
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Image, ImageError> {
    let malformed = |e: png::DecodingError| ImageError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Malformed {
        path: path.display().to_string(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(malformed)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth {
            path: path.display().to_string(),
            detail: format!("{:?}", info.bit_depth),
        });
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(ImageError::UnsupportedFormat(format!(
                "{}: PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    Ok(from_interleaved(w, h, channels, &buf[..w * h * channels]))
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<Image, ImageError> {
    let malformed = |reason: &str| ImageError::Malformed {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(malformed("maxval out of range"));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedBitDepth {
            path: path.display().to_string(),
            detail: format!("maxval {maxval}"),
        });
    }
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(malformed("truncated pixel data"));
    }
    Ok(from_interleaved(w, h, channels, &bytes[pos..pos + need]))
}

/// Saves as PNG, or as PGM/PPM when the extension is `.pgm`, `.ppm` or
/// `.pnm`. Samples are clamped to `[0, 1]` and quantized by `round(v*255)`.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" | "" => encode_png(image).map_err(|e| ImageError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?,
        "pgm" | "ppm" | "pnm" => encode_pnm(image),
        other => return Err(ImageError::UnsupportedFormat(format!("extension .{other}"))),
    };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn encode_png(image: &Image) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(if image.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&to_interleaved(image))?;
    }
    Ok(out)
}

fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(to_interleaved(image));
    out
}

/// File extensions recognised as images.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by file name. A path naming a
/// single image file yields just that file.
pub fn list_images(path: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>, ImageError> {
    let path = path.as_ref();
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every image of [`list_images`] as `(file name, image)`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<(String, Image)>, ImageError> {
    list_images(path)?
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            load_image(&p).map(|img| (name, img))
        })
        .collect()
}

/// Top-left corner of a square patch inside a source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLocation {
    pub image: usize,
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Seeded uniform sampler of square patch locations over a set of images.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    sizes: Vec<(usize, usize)>,
    patch: usize,
    rng: ChaCha8Rng,
}

pub const DEFAULT_PATCH: usize = 128;

impl PatchSampler {
    pub fn new(sources: &[Image], patch: usize, seed: u64) -> Result<Self, ImageError> {
        for img in sources {
            if patch > img.width || patch > img.height {
                return Err(ImageError::PatchTooLarge {
                    patch,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        Ok(Self {
            sizes: sources.iter().map(|i| (i.width, i.height)).collect(),
            patch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    /// Uniform corner in a given image, or in a uniformly chosen one.
    pub fn sample_location(&mut self, image_index: Option<usize>) -> Result<PatchLocation, ImageError> {
        let len = self.sizes.len();
        let image = match image_index {
            Some(i) if i < len => i,
            Some(index) => return Err(ImageError::NoSuchImage { index, len }),
            None if len == 0 => return Err(ImageError::NoSuchImage { index: 0, len }),
            None => self.rng.random_range(0..len),
        };
        let (w, h) = self.sizes[image];
        let x = self.rng.random_range(0..=w - self.patch);
        let y = self.rng.random_range(0..=h - self.patch);
        Ok(PatchLocation {
            image,
            x,
            y,
            size: self.patch,
        })
    }

    pub fn sample_patch(&mut self, sources: &[Image], image_index: Option<usize>) -> Result<Image, ImageError> {
        let loc = self.sample_location(image_index)?;
        Ok(loc.crop(&sources[loc.image]))
    }
}

impl PatchLocation {
    pub fn crop(&self, image: &Image) -> Image {
        image.crop(self.x, self.y, self.size, self.size)
    }
}
