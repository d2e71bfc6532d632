//! Synthetic environments standing in for recorded captures.
//!
//! RSSI follows the log-distance path-loss model and FTM an affine round-trip
//! model with half-normal jitter and an additive NLOS bias:
//!
//! ```text
//! rssi   = rssi_ref - 10 * n * log10(d) + N(0, rssi_noise_std)
//! ftm_ns = 2 d / c * 1e9 + rtt_offset + |N(0, rtt_noise_std)| + nlos_bias
//! ```
//!
//! Random draws happen in a fixed order from one [`SeededRng`] seeded with
//! `profile.seed`: AP placement, reference-point selection, then per sample
//! and per AP the RSSI draw followed by the RTT draw (CSI profiles draw the
//! header RSSI and then imaginary/real noise per subcarrier).

use serde::{Deserialize, Serialize};

use super::{quantize_label, ApReading, CsiFrame, FtmRssiSample, Result, TelemetryError, TelemetrySample, MAX_APS};
use crate::rng::SeededRng;

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Corridor,
    Theatre,
    Office,
    Hallway,
    Custom,
}

impl std::str::FromStr for ProfileName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "corridor" => Ok(ProfileName::Corridor),
            "theatre" | "theater" => Ok(ProfileName::Theatre),
            "office" => Ok(ProfileName::Office),
            "hallway" => Ok(ProfileName::Hallway),
            "custom" => Ok(ProfileName::Custom),
            other => Err(format!("unknown profile {other:?}")),
        }
    }
}

/// Parameters of one synthetic radio environment.
///
/// `hallway` produces CSI frames (one transmitter/receiver pair at integer
/// separations starting at 6 m); every other profile produces FTM/RSSI
/// records labeled with the distance to AP 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvProfile {
    pub name: ProfileName,
    /// Width and length in meters.
    pub area_m: (f64, f64),
    pub grid_m: f64,
    pub n_aps: usize,
    pub pathloss_exponent: f64,
    pub rssi_ref_dbm: f64,
    pub rssi_noise_std_db: f64,
    pub rtt_offset_ns: f64,
    pub rtt_noise_std_ns: f64,
    pub nlos_bias_ns: f64,
    /// Subcarriers per CSI frame (hallway only).
    pub csi_subcarriers: usize,
    /// I/Q noise in raw CSI units (hallway only).
    pub csi_noise_std: f64,
    pub seed: u64,
}

impl EnvProfile {
    /// 35 x 6 m NLOS corridor, 0.6 m grid, 5 APs.
    pub fn corridor(seed: u64) -> Self {
        Self {
            name: ProfileName::Corridor,
            area_m: (35.0, 6.0),
            grid_m: 0.6,
            n_aps: 5,
            pathloss_exponent: 3.0,
            rssi_ref_dbm: -40.0,
            rssi_noise_std_db: 4.0,
            rtt_offset_ns: 0.0,
            rtt_noise_std_ns: 2.0,
            nlos_bias_ns: 4.0,
            csi_subcarriers: 0,
            csi_noise_std: 0.0,
            seed,
        }
    }

    /// 15 x 14.5 m line-of-sight lecture theatre.
    pub fn theatre(seed: u64) -> Self {
        Self {
            name: ProfileName::Theatre,
            area_m: (15.0, 14.5),
            pathloss_exponent: 2.0,
            rssi_noise_std_db: 3.0,
            rtt_noise_std_ns: 1.5,
            nlos_bias_ns: 0.0,
            ..Self::corridor(seed)
        }
    }

    /// 18 x 5.5 m office with mixed propagation.
    pub fn office(seed: u64) -> Self {
        Self {
            name: ProfileName::Office,
            area_m: (18.0, 5.5),
            pathloss_exponent: 2.6,
            rssi_noise_std_db: 3.5,
            rtt_noise_std_ns: 2.0,
            nlos_bias_ns: 2.0,
            ..Self::corridor(seed)
        }
    }

    /// ESP32 pair in a 12 x 2 m hallway, separations 6, 7, 8, ... m.
    pub fn hallway(seed: u64) -> Self {
        Self {
            name: ProfileName::Hallway,
            area_m: (12.0, 2.0),
            grid_m: 1.0,
            n_aps: 1,
            pathloss_exponent: 2.0,
            rssi_ref_dbm: -40.0,
            rssi_noise_std_db: 1.0,
            rtt_offset_ns: 0.0,
            rtt_noise_std_ns: 0.0,
            nlos_bias_ns: 0.0,
            csi_subcarriers: 64,
            csi_noise_std: 1.5,
            seed,
        }
    }

    pub fn preset(name: ProfileName, seed: u64) -> Self {
        match name {
            ProfileName::Corridor | ProfileName::Custom => Self { name, ..Self::corridor(seed) },
            ProfileName::Theatre => Self::theatre(seed),
            ProfileName::Office => Self::office(seed),
            ProfileName::Hallway => Self::hallway(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TelemetryError::InvalidProfile(msg));
        let (w, l) = self.area_m;
        if !(w.is_finite() && l.is_finite() && w > 0.0 && l > 0.0) {
            return bad(format!("area must be positive, got {w} x {l}"));
        }
        if !(self.grid_m.is_finite() && self.grid_m > 0.0) {
            return bad(format!("grid spacing must be positive, got {}", self.grid_m));
        }
        if self.n_aps == 0 || self.n_aps > MAX_APS {
            return bad(format!("n_aps must be in 1..={MAX_APS}, got {}", self.n_aps));
        }
        if !(1.5..=6.0).contains(&self.pathloss_exponent) {
            return bad(format!("path-loss exponent must be in [1.5, 6], got {}", self.pathloss_exponent));
        }
        for (what, v) in [
            ("rssi_noise_std_db", self.rssi_noise_std_db),
            ("rtt_noise_std_ns", self.rtt_noise_std_ns),
            ("nlos_bias_ns", self.nlos_bias_ns),
            ("csi_noise_std", self.csi_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{what} must be >= 0, got {v}"));
            }
        }
        if !(self.rssi_ref_dbm.is_finite() && self.rtt_offset_ns.is_finite()) {
            return bad("reference power and RTT offset must be finite".into());
        }
        if self.name == ProfileName::Hallway && self.csi_subcarriers < 2 {
            return bad("hallway profile needs at least 2 CSI subcarriers".into());
        }
        Ok(())
    }

    /// Noise-free RSSI at `distance_m`.
    pub fn mean_rssi(&self, distance_m: f64) -> f64 {
        self.rssi_ref_dbm - 10.0 * self.pathloss_exponent * distance_m.log10()
    }

    /// Noise-free FTM round-trip time at `distance_m`, bias included.
    pub fn mean_ftm_ns(&self, distance_m: f64) -> f64 {
        2.0 * distance_m / SPEED_OF_LIGHT_M_PER_S * 1e9 + self.rtt_offset_ns + self.nlos_bias_ns
    }

    fn point_on_perimeter(&self, u: f64) -> (f64, f64) {
        let (w, l) = self.area_m;
        let mut t = u;
        if t < w {
            return (t, 0.0);
        }
        t -= w;
        if t < l {
            return (w, t);
        }
        t -= l;
        if t < w {
            return (w - t, l);
        }
        t -= w;
        (0.0, (l - t).max(0.0))
    }

    /// AP positions, one per equal share of the perimeter, jittered within it.
    fn place_aps(&self, rng: &mut SeededRng) -> Vec<(f64, f64)> {
        let perimeter = 2.0 * (self.area_m.0 + self.area_m.1);
        (0..self.n_aps)
            .map(|k| {
                let u = (k as f64 + rng.uniform()) / self.n_aps as f64 * perimeter;
                self.point_on_perimeter(u)
            })
            .collect()
    }

    /// Grid points offset half a cell from the walls, row-major.
    fn grid_points(&self) -> Vec<(f64, f64)> {
        let (w, l) = self.area_m;
        let nx = ((w / self.grid_m).floor() as usize).max(1);
        let ny = ((l / self.grid_m).floor() as usize).max(1);
        let mut pts = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                pts.push(((ix as f64 + 0.5) * self.grid_m, (iy as f64 + 0.5) * self.grid_m));
            }
        }
        pts
    }
}

/// Generates `n_rps * samples_per_rp` labeled samples, reference-point major.
pub fn synthesize_dataset(profile: &EnvProfile, n_rps: usize, samples_per_rp: usize) -> Result<Vec<TelemetrySample>> {
    profile.validate()?;
    if n_rps == 0 || samples_per_rp == 0 {
        return Err(TelemetryError::InvalidProfile("need at least one reference point and sample".into()));
    }
    let mut rng = SeededRng::new(profile.seed);
    if profile.name == ProfileName::Hallway {
        return synthesize_hallway(profile, n_rps, samples_per_rp, &mut rng);
    }

    let aps = profile.place_aps(&mut rng);
    let grid = profile.grid_points();
    if n_rps > grid.len() {
        return Err(TelemetryError::InvalidProfile(format!(
            "{n_rps} reference points requested but the grid has {}",
            grid.len()
        )));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    rng.shuffle(&mut order);
    let mut chosen = order[..n_rps].to_vec();
    chosen.sort_unstable();

    let mut out = Vec::with_capacity(n_rps * samples_per_rp);
    for &g in &chosen {
        let rp = grid[g];
        let dists: Vec<f64> = aps.iter().map(|a| ((rp.0 - a.0).powi(2) + (rp.1 - a.1).powi(2)).sqrt()).collect();
        let label = quantize_label(dists[0]);
        for _ in 0..samples_per_rp {
            let readings = dists
                .iter()
                .enumerate()
                .map(|(k, &d)| {
                    let rssi = (profile.mean_rssi(d) + rng.gaussian(0.0, profile.rssi_noise_std_db)).clamp(-120.0, 0.0);
                    let ftm = (profile.mean_ftm_ns(d) + rng.gaussian(0.0, profile.rtt_noise_std_ns).abs()).max(0.0);
                    ApReading { ap_id: k as u32 + 1, ftm_ns: Some(ftm), rssi_dbm: Some(rssi) }
                })
                .collect();
            out.push(FtmRssiSample::new(readings, label)?.into());
        }
    }
    Ok(out)
}

fn synthesize_hallway(
    profile: &EnvProfile,
    n_classes: usize,
    samples_per_class: usize,
    rng: &mut SeededRng,
) -> Result<Vec<TelemetrySample>> {
    const FIRST_SEPARATION_M: f64 = 6.0;
    const BANDWIDTH_HZ: f64 = 20e6;
    const WALL_REFLECTION: f64 = 0.5;

    let last = FIRST_SEPARATION_M + (n_classes - 1) as f64 * profile.grid_m;
    if last > profile.area_m.0 {
        return Err(TelemetryError::InvalidProfile(format!(
            "separation {last} m exceeds hallway length {} m",
            profile.area_m.0
        )));
    }
    let n_sc = profile.csi_subcarriers;
    let spacing_hz = BANDWIDTH_HZ / n_sc as f64;
    let guard = n_sc * 7 / 16;
    let clamp_i8 = |v: f64| v.round().clamp(-128.0, 127.0) as i8;

    let mut out = Vec::with_capacity(n_classes * samples_per_class);
    for class in 0..n_classes {
        let d = FIRST_SEPARATION_M + class as f64 * profile.grid_m;
        let tau_direct = d / SPEED_OF_LIGHT_M_PER_S;
        let reflected = (d * d + (2.0 * profile.area_m.1).powi(2)).sqrt();
        let tau_reflected = reflected / SPEED_OF_LIGHT_M_PER_S;
        let reflected_gain = WALL_REFLECTION * d / reflected;
        for _ in 0..samples_per_class {
            let rssi = profile.mean_rssi(d) + rng.gaussian(0.0, profile.rssi_noise_std_db);
            let amplitude = 10f64.powf((rssi + 80.0) / 20.0);
            let mut values = Vec::with_capacity(4 + 2 * n_sc);
            values.extend([clamp_i8(rssi), -92, 4, 0]);
            for k in 0..n_sc {
                let s = k as i64 - (n_sc / 2) as i64;
                let (ni, nr) = (rng.normal(), rng.normal());
                if s == 0 || s.unsigned_abs() as usize > guard {
                    values.extend([0, 0]);
                    continue;
                }
                let f = s as f64 * spacing_hz;
                let phase_direct = -2.0 * std::f64::consts::PI * f * tau_direct;
                let phase_reflected = -2.0 * std::f64::consts::PI * f * tau_reflected;
                let re = phase_direct.cos() + reflected_gain * phase_reflected.cos();
                let im = phase_direct.sin() + reflected_gain * phase_reflected.sin();
                values.push(clamp_i8(amplitude * im + profile.csi_noise_std * ni));
                values.push(clamp_i8(amplitude * re + profile.csi_noise_std * nr));
            }
            out.push(CsiFrame::new(values, d)?.into());
        }
    }
    Ok(out)
}
