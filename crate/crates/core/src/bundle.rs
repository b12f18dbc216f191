//! Model bundles: everything needed to edit a face, in one file.
//!
//! Layout (`IMPBNDL1`, little-endian): world config text, its hash, the
//! mixing matrix, the encoder with its corrector, then per attribute the
//! regressor and optional flow as nested model files. A SHA-256 of all
//! preceding bytes closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::attribute::AttributeKind;
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::flow::{edit_latent, CnfModel, LatentVector};
use crate::io::{parse_world_config, world_config_text};
use crate::metrics::cosine;
use crate::nn::{Mlp, OutputActivation};
use crate::predictor::RegressorModel;
use crate::world::{
    detection_energy, invert_with_restoration, Corrector, EncoderModel, FeatureMixer, ImageGrid,
    MixingMatrix, QualityRecord, WorldConfig, WorldSample,
};

pub const BUNDLE_MAGIC: &[u8; 8] = b"IMPBNDL1";
pub const BUNDLE_VERSION: u32 = 1;

/// Hex SHA-256 of the settings that define the world itself (mixing seed
/// and covariate scale). Sample seed, size and filters are left out, so
/// training and evaluation sets of one world share a hash.
pub fn config_hash(world: &WorldConfig) -> String {
    sha256_hex(
        format!(
            "seed={}\ncovariate_scale={}\n",
            world.seed, world.covariate_scale
        )
        .as_bytes(),
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Crate and file-format versions embedded in reports.
pub fn version_stamps() -> BTreeMap<String, String> {
    [
        ("impress-core", env!("CARGO_PKG_VERSION").to_string()),
        ("IMPBNDL1", BUNDLE_VERSION.to_string()),
        ("IMPFLOW1", crate::flow::FLOW_VERSION.to_string()),
        ("IMPREGR1", crate::predictor::REGRESSOR_VERSION.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeModels {
    pub regressor: RegressorModel,
    pub flow: Option<CnfModel>,
    /// World-config hash the models were trained under.
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub world: WorldConfig,
    pub config_hash: String,
    pub mixing: MixingMatrix,
    pub encoder: EncoderModel,
    pub attributes: BTreeMap<AttributeKind, AttributeModels>,
    /// Settings of each training stage, keyed by stage name, as JSON.
    pub run_log: BTreeMap<String, String>,
}

/// Result of [`ModelBundle::edit`].
#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub image: ImageGrid,
    pub latent: LatentVector,
    pub original_latent: LatentVector,
    pub original_score: f64,
    pub target_score: f64,
    /// `original_score + delta` fell outside `[0, 1]`.
    pub clamped: bool,
}

impl ModelBundle {
    pub fn new(world: WorldConfig, mixing: MixingMatrix, encoder: EncoderModel) -> Self {
        Self {
            config_hash: config_hash(&world),
            world,
            mixing,
            encoder,
            attributes: BTreeMap::new(),
            run_log: BTreeMap::new(),
        }
    }

    pub fn attribute(&self, attr: AttributeKind) -> Result<&AttributeModels> {
        self.attributes
            .get(&attr)
            .ok_or(Error::NotReady(attr.tag()))
    }

    pub fn regressor(&self, attr: AttributeKind) -> Result<&RegressorModel> {
        Ok(&self.attribute(attr)?.regressor)
    }

    pub fn flow(&self, attr: AttributeKind) -> Result<&CnfModel> {
        self.attribute(attr)?
            .flow
            .as_ref()
            .ok_or(Error::NotReady("attribute flow"))
    }

    /// Inserts or replaces the regressor of its attribute, dropping any flow
    /// trained against the previous one.
    pub fn set_regressor(&mut self, regressor: RegressorModel) {
        let entry = AttributeModels {
            config_hash: self.config_hash.clone(),
            regressor,
            flow: None,
        };
        self.attributes.insert(entry.regressor.attribute, entry);
    }

    pub fn set_flow(&mut self, attr: AttributeKind, flow: CnfModel) -> Result<()> {
        let hash = self.config_hash.clone();
        let entry = self
            .attributes
            .get_mut(&attr)
            .ok_or(Error::NotReady("attribute regressor"))?;
        entry.flow = Some(flow);
        entry.config_hash = hash;
        Ok(())
    }

    /// Encodes `x`, scores it, moves the latent by `delta` in score and
    /// inverts with identity restoration.
    pub fn edit(&self, attr: AttributeKind, x: &ImageGrid, delta: f64) -> Result<EditOutcome> {
        let regressor = self.regressor(attr)?;
        let flow = self.flow(attr)?;
        let w = self.encoder.encode(x)?;
        let s = regressor.predict(x)?;
        let (edited, target) = edit_latent(flow, &w, s, delta)?;
        let image = invert_with_restoration(&self.encoder, &self.mixing, &edited, x)?;
        Ok(EditOutcome {
            image,
            latent: edited,
            original_latent: w,
            original_score: s,
            target_score: target,
            clamped: !(0.0..=1.0).contains(&(s + delta)),
        })
    }

    /// Detection energy of each sample and the identity similarity between
    /// it and its own restored reconstruction, ready for `quality_filter`.
    pub fn quality_records<'a>(
        &self,
        samples: &'a [WorldSample],
    ) -> Result<Vec<QualityRecord<&'a WorldSample>>> {
        samples
            .iter()
            .map(|s| {
                let w = self.encoder.encode(&s.image)?;
                let recon = invert_with_restoration(&self.encoder, &self.mixing, &w, &s.image)?;
                let id0 = self.encoder.identity_of_image(&self.mixing, &s.image)?;
                let id1 = self.encoder.identity_of_image(&self.mixing, &recon)?;
                Ok(QualityRecord {
                    item: s,
                    energy: detection_energy(&s.image),
                    identity_similarity: cosine(&id0, &id1)?,
                })
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(BUNDLE_MAGIC, BUNDLE_VERSION);
        w.str(&world_config_text(&self.world));
        w.str(&self.config_hash);
        w.f32s(&self.mixing.to_row_major());
        write_mlp(&mut w, &self.encoder.e1);
        match &self.encoder.corrector {
            Some(c) => {
                w.u32(1);
                w.usize(c.mixer.channels());
                w.f32s(c.mixer.params());
                write_mlp(&mut w, &c.mlp);
            }
            None => w.u32(0),
        }
        w.usize(self.attributes.len());
        for m in self.attributes.values() {
            w.str(&m.config_hash);
            w.bytes(&m.regressor.to_bytes());
            match &m.flow {
                Some(f) => {
                    w.u32(1);
                    w.bytes(&f.to_bytes());
                }
                None => w.u32(0),
            }
        }
        w.usize(self.run_log.len());
        for (k, v) in &self.run_log {
            w.str(k);
            w.str(v);
        }
        let mut buf = w.finish();
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 8 || &buf[..8] != BUNDLE_MAGIC {
            return Err(Error::BadMagic {
                expected: "IMPBNDL1",
            });
        }
        if buf.len() < 12 + 32 {
            return Err(Error::Corrupt("bundle: truncated".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        let mut r = Reader::open(body, BUNDLE_MAGIC, BUNDLE_VERSION, "bundle")?;
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt(
                "bundle: checksum mismatch (truncated or damaged file)".into(),
            ));
        }
        let world = parse_world_config(&r.str()?)?;
        let stored_hash = r.str()?;
        let hash = config_hash(&world);
        if stored_hash != hash {
            return Err(Error::HashMismatch(format!(
                "bundle header records {stored_hash}, world config hashes to {hash}"
            )));
        }
        let mixing =
            MixingMatrix::from_row_major(&r.f32s()?).map_err(|e| Error::Corrupt(e.to_string()))?;
        let e1 = read_mlp(&mut r)?;
        let corrector = match r.u32()? {
            0 => None,
            1 => {
                let channels = r.usize()?;
                let mixer = FeatureMixer::from_parts(channels, r.f32s()?)
                    .map_err(|e| Error::Corrupt(e.to_string()))?;
                Some(Corrector {
                    mixer,
                    mlp: read_mlp(&mut r)?,
                })
            }
            _ => return Err(Error::Corrupt("bundle: corrector flag".into())),
        };
        let n = r.usize()?;
        let mut attributes = BTreeMap::new();
        for _ in 0..n {
            let component_hash = r.str()?;
            if component_hash != hash {
                return Err(Error::HashMismatch(format!(
                    "component trained under {component_hash}, bundle world is {hash}"
                )));
            }
            let regressor = RegressorModel::from_bytes(r.bytes()?)?;
            let flow = match r.u32()? {
                0 => None,
                1 => Some(CnfModel::from_bytes(r.bytes()?)?),
                _ => return Err(Error::Corrupt("bundle: flow flag".into())),
            };
            attributes.insert(
                regressor.attribute,
                AttributeModels {
                    regressor,
                    flow,
                    config_hash: component_hash,
                },
            );
        }
        let mut run_log = BTreeMap::new();
        for _ in 0..r.usize()? {
            let k = r.str()?;
            run_log.insert(k, r.str()?);
        }
        r.finish()?;
        Ok(Self {
            world,
            config_hash: hash,
            mixing,
            encoder: EncoderModel { e1, corrector },
            attributes,
            run_log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_mlp(w: &mut Writer, mlp: &Mlp) {
    w.usize(mlp.sizes().len());
    for &s in mlp.sizes() {
        w.usize(s);
    }
    w.u32(match mlp.output_activation() {
        OutputActivation::Linear => 0,
        OutputActivation::Sigmoid => 1,
    });
    w.f32s(mlp.params());
}

fn read_mlp(r: &mut Reader) -> Result<Mlp> {
    let n = r.usize()?;
    if !(2..=16).contains(&n) {
        return Err(Error::Corrupt("bundle: layer count".into()));
    }
    let sizes = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let act = match r.u32()? {
        0 => OutputActivation::Linear,
        1 => OutputActivation::Sigmoid,
        _ => return Err(Error::Corrupt("bundle: activation".into())),
    };
    Mlp::from_parts(sizes, act, r.f32s()?).map_err(|e| Error::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowConfig;
    use crate::world::{render_face, FaceParams};

    fn small_bundle() -> ModelBundle {
        let world = WorldConfig::default();
        let mut enc = EncoderModel::init(8, 1);
        enc.corrector = Some(Corrector::init(4, 2));
        let mut b = ModelBundle::new(world, MixingMatrix::seeded(7), enc);
        b.set_regressor(RegressorModel::fresh(AttributeKind::Dominance, 3));
        let mut cfg = FlowConfig::new(12, vec![6], 2);
        cfg.output_gain = 1.0;
        b.set_flow(
            AttributeKind::Dominance,
            CnfModel::init(&cfg, "dominance", 4).unwrap(),
        )
        .unwrap();
        b.set_regressor(RegressorModel::fresh(AttributeKind::Trustworthiness, 5));
        b.run_log
            .insert("encoder".into(), "{\"iterations\":3}".into());
        b
    }

    #[test]
    fn round_trip_is_exact() {
        let b = small_bundle();
        let back = ModelBundle::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), b.to_bytes());
        let img = render_face(&FaceParams::zeros().with(6, 0.4)).0;
        let a = b.edit(AttributeKind::Dominance, &img, 0.1).unwrap();
        let c = back.edit(AttributeKind::Dominance, &img, 0.1).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn truncation_and_damage_are_detected() {
        let bytes = small_bundle().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
            assert!(
                matches!(
                    ModelBundle::from_bytes(&bytes[..cut]),
                    Err(Error::Corrupt(_))
                ),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(
            ModelBundle::from_bytes(&flipped),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            ModelBundle::from_bytes(b"nonsense"),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn component_hash_mismatch_is_rejected() {
        let mut b = small_bundle();
        b.attributes
            .get_mut(&AttributeKind::Dominance)
            .unwrap()
            .config_hash = config_hash(&WorldConfig {
            seed: 99,
            ..WorldConfig::default()
        });
        assert!(matches!(
            ModelBundle::from_bytes(&b.to_bytes()),
            Err(Error::HashMismatch(_))
        ));
    }

    #[test]
    fn missing_flow_is_not_ready() {
        let b = small_bundle();
        let img = render_face(&FaceParams::zeros()).0;
        assert!(matches!(
            b.edit(AttributeKind::Trustworthiness, &img, 0.1),
            Err(Error::NotReady(_))
        ));
        assert!(matches!(
            b.edit(AttributeKind::Attractiveness, &img, 0.1),
            Err(Error::NotReady(_))
        ));
    }

    #[test]
    fn hash_depends_on_world() {
        let a = WorldConfig::default();
        let b = WorldConfig {
            seed: 8,
            ..a.clone()
        };
        assert_ne!(config_hash(&a), config_hash(&b));
        let c = WorldConfig {
            sample_seed: 99,
            n: 10,
            ..a.clone()
        };
        assert_eq!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
