//! WGS84 ⇄ UTM conversion and the per-scene local metric frame.
//!
//! The transverse Mercator projection uses Krüger's series to sixth order in
//! the third flattening, which is accurate to well below a millimetre inside a
//! UTM zone. Altitude is carried through unchanged.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point in the scene's local frame: x = east, y = north, z = up, in meters.
pub type LocalPoint = Point3<f64>;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const UTM_K0: f64 = 0.9996;
const FALSE_EASTING: f64 = 500_000.0;
const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;
const MAX_UTM_LATITUDE: f64 = 84.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("latitude {0} is polar; UTM covers |lat| <= 84")]
    PolarLatitude(f64),
    #[error("invalid UTM zone number {0}")]
    InvalidZone(u8),
    #[error("zone mismatch: point in {point}, frame in {frame}")]
    ZoneMismatch { point: UtmZone, frame: UtmZone },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// Geodetic coordinate on the WGS84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    /// Degrees, positive north.
    pub latitude: f64,
    /// Degrees, positive east.
    pub longitude: f64,
    /// Meters; treated as opaque (no geoid model).
    pub altitude: f64,
}

impl GeoCoordinate {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeodesyError> {
        let p = Self {
            latitude,
            longitude,
            altitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !(self.latitude.is_finite() && self.longitude.is_finite() && self.altitude.is_finite()) {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(GeodesyError::InvalidLatitude(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(GeodesyError::InvalidLongitude(self.longitude));
        }
        Ok(())
    }
}

/// UTM zone number (1..=60) plus hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UtmZone {
    pub number: u8,
    pub north: bool,
}

impl UtmZone {
    pub fn new(number: u8, north: bool) -> Result<Self, GeodesyError> {
        if !(1..=60).contains(&number) {
            return Err(GeodesyError::InvalidZone(number));
        }
        Ok(Self { number, north })
    }

    /// Standard zone for a coordinate, including the Norway and Svalbard exceptions.
    pub fn for_coordinate(p: &GeoCoordinate) -> Self {
        let lat = p.latitude;
        let lon = p.longitude;
        let mut number = (((lon + 180.0) / 6.0).floor() as i32 + 1).clamp(1, 60) as u8;
        if (56.0..64.0).contains(&lat) && (3.0..12.0).contains(&lon) {
            number = 32;
        }
        if (72.0..=84.0).contains(&lat) {
            number = match lon {
                l if (0.0..9.0).contains(&l) => 31,
                l if (9.0..21.0).contains(&l) => 33,
                l if (21.0..33.0).contains(&l) => 35,
                l if (33.0..42.0).contains(&l) => 37,
                _ => number,
            };
        }
        Self {
            number,
            north: lat >= 0.0,
        }
    }

    /// Longitude of the zone's central meridian, degrees.
    pub fn central_meridian(&self) -> f64 {
        f64::from(self.number) * 6.0 - 183.0
    }

    pub fn hemisphere_char(&self) -> char {
        if self.north {
            'N'
        } else {
            'S'
        }
    }
}

impl std::fmt::Display for UtmZone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.number, self.hemisphere_char())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmPoint {
    pub easting: f64,
    pub northing: f64,
    pub altitude: f64,
    pub zone: UtmZone,
}

struct Kruger {
    e: f64,
    /// Rectifying radius times k0.
    scale: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

impl Kruger {
    fn wgs84() -> Self {
        let f = WGS84_F;
        let n = f / (2.0 - f);
        let e = (f * (2.0 - f)).sqrt();
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let rect = WGS84_A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0 + 7891.0 * n6 / 37800.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0 - 1983433.0 * n6 / 1935360.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0 + 167603.0 * n6 / 181440.0,
            49561.0 * n4 / 161280.0 - 179.0 * n5 / 168.0 + 6601661.0 * n6 / 7257600.0,
            34729.0 * n5 / 80640.0 - 3418889.0 * n6 / 1995840.0,
            212378941.0 * n6 / 319334400.0,
        ];
        let beta = [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0 + 96199.0 * n6 / 604800.0,
            n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0 - 1118711.0 * n6 / 3870720.0,
            17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
            4397.0 * n4 / 161280.0 - 11.0 * n5 / 504.0 - 830251.0 * n6 / 7257600.0,
            4583.0 * n5 / 161280.0 - 108847.0 * n6 / 3991680.0,
            20648693.0 * n6 / 638668800.0,
        ];
        Self {
            e,
            scale: UTM_K0 * rect,
            alpha,
            beta,
        }
    }

    /// tan of the conformal latitude from tan of the geodetic latitude.
    fn conformal_tan(&self, tau: f64) -> f64 {
        let e = self.e;
        let tau1 = tau.hypot(1.0);
        let sigma = (e * (e * tau / tau1).atanh()).sinh();
        tau * sigma.hypot(1.0) - sigma * tau1
    }

    /// Newton inversion of [`Self::conformal_tan`].
    fn geodetic_tan(&self, tau_prime: f64) -> f64 {
        let e2 = self.e * self.e;
        let mut tau = tau_prime;
        for _ in 0..8 {
            let tp = self.conformal_tan(tau);
            let dtau =
                (tau_prime - tp) / tp.hypot(1.0) * (1.0 + (1.0 - e2) * tau * tau) / ((1.0 - e2) * tau.hypot(1.0));
            tau += dtau;
            if dtau.abs() <= 1e-15 * tau.abs().max(1.0) {
                break;
            }
        }
        tau
    }
}

fn kruger() -> &'static Kruger {
    static K: std::sync::OnceLock<Kruger> = std::sync::OnceLock::new();
    K.get_or_init(Kruger::wgs84)
}

fn check_projectable(p: &GeoCoordinate) -> Result<(), GeodesyError> {
    p.validate()?;
    if p.latitude.abs() > MAX_UTM_LATITUDE {
        return Err(GeodesyError::PolarLatitude(p.latitude));
    }
    Ok(())
}

/// Forward UTM projection in the zone derived from the longitude.
pub fn geo_to_utm(p: &GeoCoordinate) -> Result<UtmPoint, GeodesyError> {
    check_projectable(p)?;
    geo_to_utm_in_zone(p, UtmZone::for_coordinate(p))
}

/// Forward UTM projection in a pinned zone (e.g. the scene's [`LocalFrame`] zone).
pub fn geo_to_utm_in_zone(p: &GeoCoordinate, zone: UtmZone) -> Result<UtmPoint, GeodesyError> {
    check_projectable(p)?;
    let k = kruger();
    let phi = p.latitude.to_radians();
    let mut dlam = (p.longitude - zone.central_meridian()).to_radians();
    if dlam > std::f64::consts::PI {
        dlam -= 2.0 * std::f64::consts::PI;
    } else if dlam < -std::f64::consts::PI {
        dlam += 2.0 * std::f64::consts::PI;
    }

    let tau_prime = k.conformal_tan(phi.tan());
    let xi_prime = tau_prime.atan2(dlam.cos());
    let eta_prime = (dlam.sin() / tau_prime.hypot(dlam.cos())).asinh();

    let mut xi = xi_prime;
    let mut eta = eta_prime;
    for (j, a) in k.alpha.iter().enumerate() {
        let m = 2.0 * (j as f64 + 1.0);
        xi += a * (m * xi_prime).sin() * (m * eta_prime).cosh();
        eta += a * (m * xi_prime).cos() * (m * eta_prime).sinh();
    }

    let easting = FALSE_EASTING + k.scale * eta;
    let mut northing = k.scale * xi;
    if !zone.north {
        northing += FALSE_NORTHING_SOUTH;
    }
    Ok(UtmPoint {
        easting,
        northing,
        altitude: p.altitude,
        zone,
    })
}

/// Inverse UTM projection.
pub fn utm_to_geo(p: &UtmPoint) -> Result<GeoCoordinate, GeodesyError> {
    if !(p.easting.is_finite() && p.northing.is_finite() && p.altitude.is_finite()) {
        return Err(GeodesyError::NonFinite);
    }
    UtmZone::new(p.zone.number, p.zone.north)?;
    let k = kruger();
    let northing = if p.zone.north {
        p.northing
    } else {
        p.northing - FALSE_NORTHING_SOUTH
    };
    let xi = northing / k.scale;
    let eta = (p.easting - FALSE_EASTING) / k.scale;

    let mut xi_prime = xi;
    let mut eta_prime = eta;
    for (j, b) in k.beta.iter().enumerate() {
        let m = 2.0 * (j as f64 + 1.0);
        xi_prime -= b * (m * xi).sin() * (m * eta).cosh();
        eta_prime -= b * (m * xi).cos() * (m * eta).sinh();
    }

    let sin_xi = xi_prime.sin();
    let cos_xi = xi_prime.cos();
    let sinh_eta = eta_prime.sinh();
    let tau_prime = sin_xi / sinh_eta.hypot(cos_xi);
    let lam = sinh_eta.atan2(cos_xi);
    let tau = k.geodetic_tan(tau_prime);

    let latitude = tau.atan().to_degrees();
    let mut longitude = p.zone.central_meridian() + lam.to_degrees();
    if longitude > 180.0 {
        longitude -= 360.0;
    } else if longitude < -180.0 {
        longitude += 360.0;
    }
    Ok(GeoCoordinate {
        latitude,
        longitude,
        altitude: p.altitude,
    })
}

/// Scene anchor: every pipeline output is expressed relative to this UTM origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub zone: UtmZone,
    pub origin_easting: f64,
    pub origin_northing: f64,
    pub origin_altitude: f64,
}

impl LocalFrame {
    pub fn new(zone: UtmZone, easting: f64, northing: f64, altitude: f64) -> Self {
        Self {
            zone,
            origin_easting: easting,
            origin_northing: northing,
            origin_altitude: altitude,
        }
    }

    /// Frame anchored at the UTM position of `anchor` (normally the first mapping
    /// image's GPS tag), rounded to whole meters.
    pub fn from_anchor(anchor: &GeoCoordinate) -> Result<Self, GeodesyError> {
        let utm = geo_to_utm(anchor)?;
        Ok(Self::new(
            utm.zone,
            utm.easting.round(),
            utm.northing.round(),
            utm.altitude.round(),
        ))
    }

    pub fn utm_to_local(&self, p: &UtmPoint) -> Result<LocalPoint, GeodesyError> {
        if p.zone != self.zone {
            return Err(GeodesyError::ZoneMismatch {
                point: p.zone,
                frame: self.zone,
            });
        }
        Ok(LocalPoint::new(
            p.easting - self.origin_easting,
            p.northing - self.origin_northing,
            p.altitude - self.origin_altitude,
        ))
    }

    pub fn local_to_utm(&self, p: &LocalPoint) -> UtmPoint {
        UtmPoint {
            easting: p.x + self.origin_easting,
            northing: p.y + self.origin_northing,
            altitude: p.z + self.origin_altitude,
            zone: self.zone,
        }
    }

    /// Projects into this frame's zone, even if the coordinate lies in a neighbouring one.
    pub fn geo_to_local(&self, p: &GeoCoordinate) -> Result<LocalPoint, GeodesyError> {
        self.utm_to_local(&geo_to_utm_in_zone(p, self.zone)?)
    }

    pub fn local_to_geo(&self, p: &LocalPoint) -> Result<GeoCoordinate, GeodesyError> {
        utm_to_geo(&self.local_to_utm(p))
    }
}
