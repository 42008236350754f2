//! Binary episode files and the JSON manifest.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CNAV1\0" | u16 version | u8 flags
//! u64 episode id | u64 terrain seed | u64 render seed | u32 record count
//! camera: f64 fx, fy, cx, cy | u32 width, height | f64 mount[3] | f64 pitch
//! records: u32 tick | f64 position[3] | f64 rotation[9] (row-major)
//!          | f64 speed, yaw rate, steering, cmd v, cmd steer, z accel | u8 flags
//! images (flag bit 0): record count × 4 × height × width f32
//! ```

use super::{Episode, Record};
use crate::geometry::{CameraModel, Pose};
use crate::sim::{Command, TerrainSpec, VehicleParams};
use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"CNAV1\0";
pub const VERSION: u16 = 1;
pub const RECORD_BYTES: usize = 4 + 3 * 8 + 9 * 8 + 6 * 8 + 1;

const FLAG_IMAGES: u8 = 1;
const REC_COLLIDED: u8 = 1;
const REC_OUT_OF_BOUNDS: u8 = 2;

struct Writer<'a, W: Write>(&'a mut W);

impl<W: Write> Writer<'_, W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
}

struct Reader<'a, R: Read>(&'a mut R);

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

impl Episode {
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(MAGIC)?;
        w.u16(VERSION)?;
        w.u8(if self.images.is_some() { FLAG_IMAGES } else { 0 })?;
        w.u64(self.id)?;
        w.u64(self.terrain_seed)?;
        w.u64(self.render_seed)?;
        w.u32(self.records.len() as u32)?;
        let c = &self.camera;
        for v in [c.fx, c.fy, c.cx, c.cy] {
            w.f64(v)?;
        }
        w.u32(c.width as u32)?;
        w.u32(c.height as u32)?;
        for v in c.mount {
            w.f64(v)?;
        }
        w.f64(c.pitch_down)?;

        for r in &self.records {
            w.u32(r.tick)?;
            for v in r.pose.position.iter() {
                w.f64(*v)?;
            }
            for i in 0..3 {
                for j in 0..3 {
                    w.f64(r.pose.rotation[(i, j)])?;
                }
            }
            for v in [r.speed, r.yaw_rate, r.steering, r.command.v, r.command.steer, r.z_accel] {
                w.f64(v)?;
            }
            let mut flags = 0;
            if r.collided {
                flags |= REC_COLLIDED;
            }
            if r.out_of_bounds {
                flags |= REC_OUT_OF_BOUNDS;
            }
            w.u8(flags)?;
        }
        if let Some(images) = &self.images {
            for v in images {
                w.0.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Episode> {
        let mut r = Reader(input);
        let magic: [u8; 6] = r.bytes()?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = r.u8()?;
        let id = r.u64()?;
        let terrain_seed = r.u64()?;
        let render_seed = r.u64()?;
        let count = r.u32()? as usize;
        let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let mount = [r.f64()?, r.f64()?, r.f64()?];
        let pitch_down = r.f64()?;
        let camera = CameraModel { fx, fy, cx, cy, width, height, mount, pitch_down };
        camera.validate().map_err(Error::Format)?;

        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let tick = r.u32()?;
            let position = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
            let mut rotation = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    rotation[(i, j)] = r.f64()?;
                }
            }
            let speed = r.f64()?;
            let yaw_rate = r.f64()?;
            let steering = r.f64()?;
            let command = Command::new(r.f64()?, r.f64()?);
            let z_accel = r.f64()?;
            let f = r.u8()?;
            records.push(Record {
                tick,
                pose: Pose::new(position, rotation),
                speed,
                yaw_rate,
                steering,
                command,
                z_accel,
                collided: f & REC_COLLIDED != 0,
                out_of_bounds: f & REC_OUT_OF_BOUNDS != 0,
            });
        }
        let images = if flags & FLAG_IMAGES != 0 {
            let n = count * 4 * width * height;
            let mut buf = vec![0u8; n * 4];
            r.0.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated image block: {e}")))?;
            Some(
                buf.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            )
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if r.0.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after episode".into()));
        }
        Ok(Episode { id, terrain_seed, render_seed, camera, records, images })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Episode> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub file: String,
    pub terrain_seed: u64,
    pub records: usize,
    pub samples: usize,
}

/// Episode listing plus split assignment, written next to the episode files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub terrain: TerrainSpec,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub episodes: Vec<ManifestEntry>,
    pub split_seed: u64,
    pub test_episodes: Vec<u64>,
    pub train: Vec<super::SampleRef>,
    pub val: Vec<super::SampleRef>,
    pub test: Vec<super::SampleRef>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
