//! Simplified Collective Perception Message codec.
//!
//! Fixed little-endian layout mirroring the CPM containers (ITS-PDU header,
//! management, sensor information, perceived objects):
//!
//! ```text
//! "CPM1"                                                    4
//! protocol_version u8 | message_id u8 | station_id u32      6
//! lat i32 | lon i32 | altitude_cm i32 | generation_ms u64   20
//! sensor count u8 | { sensor_id u8, sensor_type u8 } * S    1 + 2S
//! object count u8 | PerceivedObject * O                     1 + 30O
//! ```
//!
//! A perceived object is `object_id u16, measurement_delta_ms i16,
//! distance_{x,y,z}_cm i32, speed_{x,y}_cms i16, heading_cdeg u16,
//! dims_{length,width,height}_cm u16, confidence u8, class u8` (30 bytes).

use rand::Rng;

use crate::error::{Error, Result};
use crate::pipeline::FeatureTensor;

pub const CPM_MAGIC: [u8; 4] = *b"CPM1";
pub const CPM_FIXED_LEN: usize = 4 + 6 + 20 + 1 + 1;
pub const SENSOR_LEN: usize = 2;
pub const OBJECT_LEN: usize = 30;
pub const MAX_LIST_LEN: usize = 255;

const LAT_LIMIT: i32 = 90_000_000;
const LON_LIMIT: i32 = 180_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItsPduHeader {
    pub protocol_version: u8,
    pub message_id: u8,
    pub station_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManagementContainer {
    /// Microdegrees.
    pub latitude: i32,
    /// Microdegrees.
    pub longitude: i32,
    pub altitude_cm: i32,
    pub generation_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorInfo {
    pub sensor_id: u8,
    pub sensor_type: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PerceivedObject {
    pub object_id: u16,
    /// Offset of the measurement from the generation time.
    pub measurement_delta_ms: i16,
    pub distance_x_cm: i32,
    pub distance_y_cm: i32,
    pub distance_z_cm: i32,
    pub speed_x_cms: i16,
    pub speed_y_cms: i16,
    /// Centidegrees, `< 36000`.
    pub heading_cdeg: u16,
    pub length_cm: u16,
    pub width_cm: u16,
    pub height_cm: u16,
    /// Percent, `<= 100`.
    pub confidence: u8,
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpmMessage {
    pub header: ItsPduHeader,
    pub management: ManagementContainer,
    pub sensors: Vec<SensorInfo>,
    pub objects: Vec<PerceivedObject>,
}

impl CpmMessage {
    pub fn validate(&self) -> Result<()> {
        let m = &self.management;
        if !(-LAT_LIMIT..=LAT_LIMIT).contains(&m.latitude) {
            return Err(Error::range("latitude", m.latitude));
        }
        if !(-LON_LIMIT..=LON_LIMIT).contains(&m.longitude) {
            return Err(Error::range("longitude", m.longitude));
        }
        if self.sensors.len() > MAX_LIST_LEN {
            return Err(Error::range("sensor count", self.sensors.len()));
        }
        if self.objects.len() > MAX_LIST_LEN {
            return Err(Error::range("object count", self.objects.len()));
        }
        for o in &self.objects {
            if o.heading_cdeg >= 36_000 {
                return Err(Error::range("heading_cdeg", o.heading_cdeg));
            }
            if o.confidence > 100 {
                return Err(Error::range("confidence", o.confidence));
            }
        }
        Ok(())
    }
}

/// Encoded size for `sensors` sensor entries and `objects` perceived objects.
pub fn encoded_len(sensors: usize, objects: usize) -> usize {
    CPM_FIXED_LEN + SENSOR_LEN * sensors + OBJECT_LEN * objects
}

pub fn encode_cpm(m: &CpmMessage) -> Result<Vec<u8>> {
    m.validate().map_err(|e| Error::Encode(e.to_string()))?;
    let mut out = Vec::with_capacity(encoded_len(m.sensors.len(), m.objects.len()));
    out.extend_from_slice(&CPM_MAGIC);
    out.push(m.header.protocol_version);
    out.push(m.header.message_id);
    out.extend_from_slice(&m.header.station_id.to_le_bytes());
    out.extend_from_slice(&m.management.latitude.to_le_bytes());
    out.extend_from_slice(&m.management.longitude.to_le_bytes());
    out.extend_from_slice(&m.management.altitude_cm.to_le_bytes());
    out.extend_from_slice(&m.management.generation_time_ms.to_le_bytes());
    out.push(m.sensors.len() as u8);
    for s in &m.sensors {
        out.push(s.sensor_id);
        out.push(s.sensor_type);
    }
    out.push(m.objects.len() as u8);
    for o in &m.objects {
        out.extend_from_slice(&o.object_id.to_le_bytes());
        out.extend_from_slice(&o.measurement_delta_ms.to_le_bytes());
        out.extend_from_slice(&o.distance_x_cm.to_le_bytes());
        out.extend_from_slice(&o.distance_y_cm.to_le_bytes());
        out.extend_from_slice(&o.distance_z_cm.to_le_bytes());
        out.extend_from_slice(&o.speed_x_cms.to_le_bytes());
        out.extend_from_slice(&o.speed_y_cms.to_le_bytes());
        out.extend_from_slice(&o.heading_cdeg.to_le_bytes());
        out.extend_from_slice(&o.length_cm.to_le_bytes());
        out.extend_from_slice(&o.width_cm.to_le_bytes());
        out.extend_from_slice(&o.height_cm.to_le_bytes());
        out.push(o.confidence);
        out.push(o.class);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                needed: end,
                available: self.buf.len(),
            });
        }
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
}

pub fn decode_cpm(bytes: &[u8]) -> Result<CpmMessage> {
    if bytes.len() >= 4 && bytes[..4] != CPM_MAGIC {
        return Err(Error::BadMagic {
            expected: CPM_MAGIC,
            found: bytes[..4].to_vec(),
        });
    }
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.take::<4>()?;
    let header = ItsPduHeader {
        protocol_version: c.u8()?,
        message_id: c.u8()?,
        station_id: c.u32()?,
    };
    let management = ManagementContainer {
        latitude: c.i32()?,
        longitude: c.i32()?,
        altitude_cm: c.i32()?,
        generation_time_ms: c.u64()?,
    };
    let n_sensors = c.u8()? as usize;
    let sensors = (0..n_sensors)
        .map(|_| {
            Ok(SensorInfo {
                sensor_id: c.u8()?,
                sensor_type: c.u8()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_objects = c.u8()? as usize;
    let objects = (0..n_objects)
        .map(|_| {
            Ok(PerceivedObject {
                object_id: c.u16()?,
                measurement_delta_ms: c.i16()?,
                distance_x_cm: c.i32()?,
                distance_y_cm: c.i32()?,
                distance_z_cm: c.i32()?,
                speed_x_cms: c.i16()?,
                speed_y_cms: c.i16()?,
                heading_cdeg: c.u16()?,
                length_cm: c.u16()?,
                width_cm: c.u16()?,
                height_cm: c.u16()?,
                confidence: c.u8()?,
                class: c.u8()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if c.pos != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after CPM",
            bytes.len() - c.pos
        )));
    }
    let m = CpmMessage {
        header,
        management,
        sensors,
        objects,
    };
    m.validate().map_err(|e| Error::Decode(e.to_string()))?;
    Ok(m)
}

/// A valid message with random field values and list lengths up to
/// `max_objects` objects and 8 sensors.
pub fn random_message<R: Rng + ?Sized>(rng: &mut R, max_objects: usize) -> CpmMessage {
    let n_sensors = rng.random_range(0..=8usize);
    let n_objects = rng.random_range(0..=max_objects.min(MAX_LIST_LEN));
    CpmMessage {
        header: ItsPduHeader {
            protocol_version: rng.random(),
            message_id: rng.random(),
            station_id: rng.random(),
        },
        management: ManagementContainer {
            latitude: rng.random_range(-LAT_LIMIT..=LAT_LIMIT),
            longitude: rng.random_range(-LON_LIMIT..=LON_LIMIT),
            altitude_cm: rng.random(),
            generation_time_ms: rng.random(),
        },
        sensors: (0..n_sensors)
            .map(|_| SensorInfo {
                sensor_id: rng.random(),
                sensor_type: rng.random(),
            })
            .collect(),
        objects: (0..n_objects)
            .map(|_| PerceivedObject {
                object_id: rng.random(),
                measurement_delta_ms: rng.random(),
                distance_x_cm: rng.random(),
                distance_y_cm: rng.random(),
                distance_z_cm: rng.random(),
                speed_x_cms: rng.random(),
                speed_y_cms: rng.random(),
                heading_cdeg: rng.random_range(0..36_000),
                length_cm: rng.random(),
                width_cm: rng.random(),
                height_cm: rng.random(),
                confidence: rng.random_range(0..=100),
                class: rng.random(),
            })
            .collect(),
    }
}

/// Stand-in detection head: one object per channel, placed at the strongest
/// activation of that channel's map (one cell = 1 m), up to `max_objects`.
pub fn objects_from_features(t: &FeatureTensor, max_objects: usize) -> Vec<PerceivedObject> {
    let (c, h, w) = t.dims();
    let values = t.values();
    (0..c.min(max_objects).min(MAX_LIST_LEN))
        .map(|ch| {
            let plane = &values[ch * h * w..(ch + 1) * h * w];
            let (idx, peak) = plane
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let (y, x) = (idx / w, idx % w);
            let conf = (100.0 / (1.0 + (-peak).exp())).round() as u8;
            PerceivedObject {
                object_id: ch as u16,
                distance_x_cm: x as i32 * 100 - (w as i32 * 50),
                distance_y_cm: y as i32 * 100 - (h as i32 * 50),
                heading_cdeg: ((ch * 4500) % 36_000) as u16,
                length_cm: 450,
                width_cm: 180,
                height_cm: 150,
                confidence: conf.min(100),
                class: (ch % 10) as u8,
                ..PerceivedObject::default()
            }
        })
        .collect()
}
