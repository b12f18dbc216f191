//! On-disk formats: binary PGM images, the TSV dataset index and the flat
//! key=value world config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::world::{FaceParams, ImageGrid, QualityThresholds, WorldConfig, WorldSample, PARAM_DIM};

/// Encodes `img` as binary PGM (P5, maxval 255).
pub fn pgm_bytes(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn write_pgm(path: &Path, img: &ImageGrid) -> Result<()> {
    fs::write(path, pgm_bytes(img))?;
    Ok(())
}

fn pgm_token<'a>(buf: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Corrupt("PGM header".into()));
    }
    std::str::from_utf8(&buf[start..*pos]).map_err(|_| Error::Corrupt("PGM header".into()))
}

pub fn parse_pgm(buf: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    if pgm_token(buf, &mut pos)? != "P5" {
        return Err(Error::BadMagic { expected: "P5" });
    }
    let mut num = |what: &str| -> Result<usize> {
        pgm_token(buf, &mut pos)?
            .parse()
            .map_err(|_| Error::Corrupt(format!("PGM {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Corrupt(format!(
            "PGM maxval {maxval} (only 8-bit supported)"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let end = pos + width * height;
    if end != buf.len() {
        return Err(Error::Corrupt(format!(
            "PGM raster: expected {} bytes, found {}",
            width * height,
            buf.len().saturating_sub(pos)
        )));
    }
    ImageGrid::from_bytes(height, width, &buf[pos..end], maxval as u16)
}

pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    parse_pgm(&fs::read(path)?)
}

/// Column header of the dataset index.
pub fn dataset_header() -> String {
    let mut h = String::from("id");
    for i in 0..PARAM_DIM {
        write!(h, "\tp{i}").unwrap();
    }
    h.push_str("\tscore_trust\tscore_dom\tscore_attr\timg_path");
    h
}

pub const DATASET_INDEX: &str = "dataset.tsv";
pub const WORLD_CONFIG_FILE: &str = "world.cfg";

/// Writes `dir/dataset.tsv`, one PGM per sample under `dir/img/`, and
/// `dir/world.cfg`.
pub fn write_dataset(dir: &Path, world: &WorldConfig, samples: &[WorldSample]) -> Result<()> {
    fs::create_dir_all(dir.join("img"))?;
    let mut tsv = dataset_header();
    tsv.push('\n');
    for s in samples {
        let rel = format!("img/{:06}.pgm", s.id);
        write_pgm(&dir.join(&rel), &s.image)?;
        write!(tsv, "{}", s.id).unwrap();
        for v in s.params.0 {
            write!(tsv, "\t{v}").unwrap();
        }
        for v in s.scores {
            write!(tsv, "\t{v}").unwrap();
        }
        writeln!(tsv, "\t{rel}").unwrap();
    }
    fs::write(dir.join(DATASET_INDEX), tsv)?;
    fs::write(dir.join(WORLD_CONFIG_FILE), world_config_text(world))?;
    Ok(())
}

/// Accepts either the dataset directory or the index file itself.
pub fn dataset_index_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_INDEX)
    } else {
        path.to_path_buf()
    }
}

/// Reads a dataset index; image paths are resolved against its directory.
pub fn read_dataset(path: &Path) -> Result<Vec<WorldSample>> {
    let index = dataset_index_path(path);
    let base = index.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&index)?;
    let mut lines = text.lines();
    if lines.next() != Some(dataset_header().as_str()) {
        return Err(Error::Corrupt(format!(
            "dataset header in {}",
            index.display()
        )));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = || Error::Corrupt(format!("dataset row {}", k + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 1 + PARAM_DIM + 3 + 1 {
            return Err(bad());
        }
        let id = cols[0].parse().map_err(|_| bad())?;
        let nums = cols[1..1 + PARAM_DIM + 3]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let params = FaceParams::from_slice(&nums[..PARAM_DIM])?;
        let scores = [nums[PARAM_DIM], nums[PARAM_DIM + 1], nums[PARAM_DIM + 2]];
        let image = read_pgm(&base.join(cols[cols.len() - 1]))?;
        out.push(WorldSample {
            id,
            params,
            image,
            scores,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn world_config_text(w: &WorldConfig) -> String {
    format!(
        "seed={}\nsample_seed={}\nn={}\nadult_only={}\ncovariate_scale={}\nenergy_threshold={}\nidentity_threshold={}\n",
        w.seed, w.sample_seed, w.n, w.adult_only, w.covariate_scale, w.thresholds.energy, w.thresholds.identity
    )
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped and
/// missing keys keep their defaults.
pub fn parse_world_config(text: &str) -> Result<WorldConfig> {
    let mut w = WorldConfig::default();
    let mut t = QualityThresholds::default();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Corrupt(format!("world config line {}", k + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = || Error::Corrupt(format!("world config value for `{key}`"));
        match key {
            "seed" => w.seed = value.parse().map_err(|_| bad())?,
            "sample_seed" => w.sample_seed = value.parse().map_err(|_| bad())?,
            "n" => w.n = value.parse().map_err(|_| bad())?,
            "adult_only" => w.adult_only = value.parse().map_err(|_| bad())?,
            "covariate_scale" => w.covariate_scale = value.parse().map_err(|_| bad())?,
            "energy_threshold" => t.energy = value.parse().map_err(|_| bad())?,
            "identity_threshold" => t.identity = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Corrupt(format!("unknown world config key `{key}`"))),
        }
    }
    w.thresholds = t;
    Ok(w)
}

pub fn read_world_config(path: &Path) -> Result<WorldConfig> {
    parse_world_config(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::sample_dataset;

    #[test]
    fn pgm_round_trip() {
        let img = ImageGrid::new(2, 3, vec![0.0, 1.0, 0.5, 0.25, 0.75, 0.1])
            .unwrap()
            .quantized();
        let bytes = pgm_bytes(&img);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(parse_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_with_comment_and_small_maxval() {
        let mut b = b"P5 # note\n2 1\n15\n".to_vec();
        b.extend([15, 0]);
        let img = parse_pgm(&b).unwrap();
        assert_eq!(img.pixels(), &[1.0, 0.0]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(matches!(
            parse_pgm(b"P2\n1 1\n255\n0"),
            Err(Error::BadMagic { .. })
        ));
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let world = WorldConfig {
            n: 5,
            ..WorldConfig::default()
        };
        let samples = sample_dataset(5, 3, false, 0.25).unwrap();
        write_dataset(dir.path(), &world, &samples).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), samples);
        assert_eq!(
            read_world_config(&dir.path().join(WORLD_CONFIG_FILE)).unwrap(),
            world
        );
    }

    #[test]
    fn world_config_parsing() {
        let w = parse_world_config("# c\nseed = 3\n\nadult_only=true\n").unwrap();
        assert_eq!(w.seed, 3);
        assert!(w.adult_only);
        assert_eq!(w.n, 5000);
        assert!(parse_world_config("bogus=1").is_err());
        assert!(parse_world_config("seed").is_err());
        assert!(parse_world_config("n=-4").is_err());
    }
}
