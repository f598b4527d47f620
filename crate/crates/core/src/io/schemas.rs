//! Readers and writers for each schema.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{Point2, Point3, Rotation3, Vector3};

use super::{
    m, malformed, opt_m, rad, read_document, unit, write_columns, write_header, write_row, FileHeader, IoError, Row,
    Section,
};
use crate::analytics::{ClassStats, EventKind, EventValue, Histogram, ScenarioEvent};
use crate::camera::{CameraFrame, Correspondence, FrameStatus, Intrinsics, Pose};
use crate::geodesy::{GeoCoordinate, LocalPoint};
use crate::georef_ba::{BaCamera, BaObservation, BaProblem};
use crate::ground::{Domain, GroundSurface};
use crate::mesh::TriangleMesh;
use crate::refine::{
    compose_euler, decompose_euler, from_world_attitude, world_attitude, Detection3D, RefinedDetection, RefinementFlag,
};
use crate::synth::TruthState;
use crate::tracker::TrajectoryRecord;

const WORLD_ANGLES: &str = "angles\tyaw pitch roll in rad, R = Rz(yaw)·Ry(pitch)·Rx(roll), box x forward and z up";
const CAMERA_ANGLES: &str = "angles\trx ry rz in rad, R = Rz(rz)·Ry(ry)·Rx(rx)";

fn point(r: &Row, i: usize) -> Result<Point3<f64>, IoError> {
    Ok(Point3::new(r.f64(i)?, r.f64(i + 1)?, r.f64(i + 2)?))
}

fn vector(r: &Row, i: usize) -> Result<Vector3<f64>, IoError> {
    Ok(Vector3::new(r.f64(i)?, r.f64(i + 1)?, r.f64(i + 2)?))
}

fn dims(r: &Row, i: usize) -> Result<Vector3<f64>, IoError> {
    let d = vector(r, i)?;
    if d.iter().any(|x| !(*x > 0.0)) {
        return Err(malformed(
            r.line,
            format!("dimensions must be positive, got {} {} {}", d.x, d.y, d.z),
        ));
    }
    Ok(d)
}

fn push_m3(out: &mut Vec<String>, v: &[f64]) {
    out.extend(v.iter().map(|x| m(*x)));
}

fn euler_cols(r: &Rotation3<f64>) -> [String; 3] {
    let (phi, theta, psi) = decompose_euler(r);
    [rad(phi), rad(theta), rad(psi)]
}

fn euler(r: &Row, i: usize) -> Result<Rotation3<f64>, IoError> {
    Ok(compose_euler(r.f64(i)?, r.f64(i + 1)?, r.f64(i + 2)?))
}

// ---- trajectories ----

pub const TRAJECTORY_COLUMNS: [&str; 18] = [
    "frame_id", "track_id", "category", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "yaw", "pitch", "roll",
    "length", "width", "height",
];

pub fn write_trajectories<W: Write>(
    w: &mut W,
    header: &FileHeader,
    records: &[TrajectoryRecord],
) -> Result<(), IoError> {
    write_header(w, "trajectories", header, &[WORLD_ANGLES])?;
    write_columns(w, &TRAJECTORY_COLUMNS)?;
    for r in records {
        let mut f = vec![
            r.frame_index.to_string(),
            r.track_id.to_string(),
            r.category.to_string(),
        ];
        push_m3(&mut f, r.position.coords.as_slice());
        push_m3(&mut f, r.velocity.as_slice());
        push_m3(&mut f, r.acceleration.as_slice());
        f.extend([rad(r.yaw), rad(r.pitch), rad(r.roll)]);
        push_m3(&mut f, r.dimensions.as_slice());
        write_row(w, &f)?;
    }
    Ok(())
}

fn trajectory_row(r: &Row) -> Result<TrajectoryRecord, IoError> {
    Ok(TrajectoryRecord {
        frame_index: r.u64(0)?,
        track_id: r.u64(1)?,
        category: r.category(2)?,
        position: point(r, 3)?,
        velocity: vector(r, 6)?,
        acceleration: vector(r, 9)?,
        yaw: r.f64(12)?,
        pitch: r.f64(13)?,
        roll: r.f64(14)?,
        dimensions: dims(r, 15)?,
    })
}

/// Records with the line each was read from.
pub fn read_trajectories_numbered<R: BufRead>(r: R) -> Result<(FileHeader, Vec<(usize, TrajectoryRecord)>), IoError> {
    let doc = read_document(r, "trajectories")?;
    let s = doc.single()?;
    s.expect_columns(&TRAJECTORY_COLUMNS)?;
    let rows = s
        .rows()
        .map(|row| {
            let row = row?;
            Ok((row.line, trajectory_row(&row)?))
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, rows))
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<(FileHeader, Vec<TrajectoryRecord>), IoError> {
    let (h, rows) = read_trajectories_numbered(r)?;
    Ok((h, rows.into_iter().map(|(_, t)| t).collect()))
}

// ---- truth ----

pub const TRUTH_COLUMNS: [&str; 15] = [
    "frame_id",
    "object_id",
    "category",
    "x",
    "y",
    "z",
    "vx",
    "vy",
    "vz",
    "yaw",
    "pitch",
    "roll",
    "length",
    "width",
    "height",
];

pub fn write_truth<W: Write>(w: &mut W, header: &FileHeader, states: &[TruthState]) -> Result<(), IoError> {
    write_header(w, "truth", header, &[WORLD_ANGLES])?;
    write_columns(w, &TRUTH_COLUMNS)?;
    for t in states {
        let mut f = vec![
            t.frame_index.to_string(),
            t.object_id.to_string(),
            t.category.to_string(),
        ];
        push_m3(&mut f, t.position.coords.as_slice());
        push_m3(&mut f, t.velocity.as_slice());
        f.extend([rad(t.yaw), rad(t.pitch), rad(t.roll)]);
        push_m3(&mut f, t.dimensions.as_slice());
        write_row(w, &f)?;
    }
    Ok(())
}

pub fn read_truth<R: BufRead>(r: R) -> Result<(FileHeader, Vec<TruthState>), IoError> {
    let doc = read_document(r, "truth")?;
    let s = doc.single()?;
    s.expect_columns(&TRUTH_COLUMNS)?;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            Ok(TruthState {
                frame_index: r.u64(0)?,
                object_id: r.u64(1)?,
                category: r.category(2)?,
                position: point(&r, 3)?,
                velocity: vector(&r, 6)?,
                yaw: r.f64(9)?,
                pitch: r.f64(10)?,
                roll: r.f64(11)?,
                dimensions: dims(&r, 12)?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- detections ----

pub const DETECTION_COLUMNS: [&str; 16] = [
    "frame_id", "category", "score", "u_min", "v_min", "u_max", "v_max", "length", "width", "height", "rx", "ry", "rz",
    "depth", "u", "v",
];

pub fn write_detections<W: Write>(w: &mut W, header: &FileHeader, detections: &[Detection3D]) -> Result<(), IoError> {
    write_header(w, "detections", header, &[CAMERA_ANGLES, "pixels\tu right, v down"])?;
    write_columns(w, &DETECTION_COLUMNS)?;
    for d in detections {
        let mut f = vec![d.frame_index.to_string(), d.category.to_string(), m(d.score)];
        push_m3(&mut f, &d.bbox2d);
        push_m3(&mut f, d.dimensions.as_slice());
        f.extend(euler_cols(&d.orientation_cam));
        f.extend([m(d.depth), m(d.ground_center_px.x), m(d.ground_center_px.y)]);
        write_row(w, &f)?;
    }
    Ok(())
}

pub fn read_detections<R: BufRead>(r: R) -> Result<(FileHeader, Vec<Detection3D>), IoError> {
    let doc = read_document(r, "detections")?;
    let s = doc.single()?;
    s.expect_columns(&DETECTION_COLUMNS)?;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            Ok(Detection3D {
                frame_index: r.u64(0)?,
                category: r.category(1)?,
                score: r.f64(2)?,
                bbox2d: [r.f64(3)?, r.f64(4)?, r.f64(5)?, r.f64(6)?],
                dimensions: dims(&r, 7)?,
                orientation_cam: euler(&r, 10)?,
                depth: r.f64(13)?,
                ground_center_px: Point2::new(r.f64(14)?, r.f64(15)?),
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- refined detections ----

pub const REFINED_COLUMNS: [&str; 13] = [
    "frame_id", "category", "score", "x", "y", "z", "yaw", "pitch", "roll", "length", "width", "height", "flag",
];

pub fn write_refined<W: Write>(w: &mut W, header: &FileHeader, detections: &[RefinedDetection]) -> Result<(), IoError> {
    write_header(w, "refined", header, &[WORLD_ANGLES])?;
    write_columns(w, &REFINED_COLUMNS)?;
    for d in detections {
        let (yaw, pitch, roll) = world_attitude(&d.orientation_world);
        let mut f = vec![d.frame_index.to_string(), d.category.to_string(), m(d.score)];
        push_m3(&mut f, d.position_world.coords.as_slice());
        f.extend([rad(yaw), rad(pitch), rad(roll)]);
        push_m3(&mut f, d.dimensions.as_slice());
        f.push(d.flag.as_str().to_string());
        write_row(w, &f)?;
    }
    Ok(())
}

pub fn read_refined<R: BufRead>(r: R) -> Result<(FileHeader, Vec<RefinedDetection>), IoError> {
    let doc = read_document(r, "refined")?;
    let s = doc.single()?;
    s.expect_columns(&REFINED_COLUMNS)?;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            Ok(RefinedDetection {
                frame_index: r.u64(0)?,
                category: r.category(1)?,
                score: r.f64(2)?,
                position_world: point(&r, 3)?,
                orientation_world: from_world_attitude(r.f64(6)?, r.f64(7)?, r.f64(8)?),
                dimensions: dims(&r, 9)?,
                flag: RefinementFlag::parse(r.str(12))
                    .ok_or_else(|| malformed(r.line, format!("unknown refinement flag '{}'", r.str(12))))?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- correspondences ----

pub const CORRESPONDENCE_COLUMNS: [&str; 6] = ["frame_id", "u", "v", "x", "y", "z"];

pub fn write_correspondences<W: Write>(
    w: &mut W,
    header: &FileHeader,
    frames: &[(u64, Vec<Correspondence>)],
) -> Result<(), IoError> {
    write_header(w, "correspondences", header, &[])?;
    write_columns(w, &CORRESPONDENCE_COLUMNS)?;
    for (frame, list) in frames {
        for c in list {
            let mut f = vec![frame.to_string(), m(c.pixel.x), m(c.pixel.y)];
            push_m3(&mut f, c.world.coords.as_slice());
            write_row(w, &f)?;
        }
    }
    Ok(())
}

/// Correspondences grouped by frame in ascending frame order.
pub fn read_correspondences<R: BufRead>(r: R) -> Result<(FileHeader, Vec<(u64, Vec<Correspondence>)>), IoError> {
    let doc = read_document(r, "correspondences")?;
    let s = doc.single()?;
    s.expect_columns(&CORRESPONDENCE_COLUMNS)?;
    let mut map: BTreeMap<u64, Vec<Correspondence>> = BTreeMap::new();
    for row in s.rows() {
        let r = row?;
        map.entry(r.u64(0)?).or_default().push(Correspondence {
            pixel: Point2::new(r.f64(1)?, r.f64(2)?),
            world: point(&r, 3)?,
        });
    }
    Ok((doc.header, map.into_iter().collect()))
}

// ---- camera frames ----

pub const CAMERA_FRAME_COLUMNS: [&str; 20] = [
    "frame_id",
    "timestamp",
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "rx",
    "ry",
    "rz",
    "center_x",
    "center_y",
    "center_z",
    "gps_x",
    "gps_y",
    "gps_z",
    "inliers",
    "rms_px",
    "status",
];

pub fn write_camera_frames<W: Write>(w: &mut W, header: &FileHeader, frames: &[CameraFrame]) -> Result<(), IoError> {
    write_header(
        w,
        "camera_frames",
        header,
        &[CAMERA_ANGLES, "pose\tworld to camera rotation and camera center"],
    )?;
    write_columns(w, &CAMERA_FRAME_COLUMNS)?;
    for c in frames {
        let k = &c.intrinsics;
        let mut f = vec![
            c.frame_index.to_string(),
            m(c.timestamp),
            m(k.fx),
            m(k.fy),
            m(k.cx),
            m(k.cy),
            k.width.to_string(),
            k.height.to_string(),
        ];
        f.extend(euler_cols(&c.pose.rotation));
        push_m3(&mut f, c.pose.center().coords.as_slice());
        for i in 0..3 {
            f.push(opt_m(c.gps_prior.map(|g| g[i])));
        }
        f.extend([
            c.inlier_count.to_string(),
            m(c.rms_reprojection),
            c.status.as_str().to_string(),
        ]);
        write_row(w, &f)?;
    }
    Ok(())
}

fn intrinsics(r: &Row, i: usize) -> Result<Intrinsics, IoError> {
    Intrinsics::new(
        r.f64(i)?,
        r.f64(i + 1)?,
        r.f64(i + 2)?,
        r.f64(i + 3)?,
        r.u32(i + 4)?,
        r.u32(i + 5)?,
    )
    .map_err(|e| malformed(r.line, e.to_string()))
}

fn opt_point(r: &Row, i: usize) -> Result<Option<LocalPoint>, IoError> {
    match (r.opt_f64(i)?, r.opt_f64(i + 1)?, r.opt_f64(i + 2)?) {
        (Some(x), Some(y), Some(z)) => Ok(Some(Point3::new(x, y, z))),
        (None, None, None) => Ok(None),
        _ => Err(malformed(r.line, "GPS columns must be all present or all '-'")),
    }
}

pub fn read_camera_frames<R: BufRead>(r: R) -> Result<(FileHeader, Vec<CameraFrame>), IoError> {
    let doc = read_document(r, "camera_frames")?;
    let s = doc.single()?;
    s.expect_columns(&CAMERA_FRAME_COLUMNS)?;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            let rotation = euler(&r, 8)?;
            Ok(CameraFrame {
                frame_index: r.u64(0)?,
                timestamp: r.f64(1)?,
                intrinsics: intrinsics(&r, 2)?,
                pose: Pose::from_center(rotation, &point(&r, 11)?),
                gps_prior: opt_point(&r, 14)?,
                inlier_count: r.usize(17)?,
                rms_reprojection: r.f64(18)?,
                status: FrameStatus::parse(r.str(19))
                    .ok_or_else(|| malformed(r.line, format!("unknown frame status '{}'", r.str(19))))?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- GPS tags ----

pub const GPS_COLUMNS: [&str; 4] = ["frame_id", "latitude", "longitude", "altitude"];

/// GPS tags are stored as WGS84 coordinates and converted through the
/// header's local frame.
pub fn write_gps_tags<W: Write>(w: &mut W, header: &FileHeader, tags: &[(u64, LocalPoint)]) -> Result<(), IoError> {
    write_header(w, "gps", header, &["units\tdegrees, meters"])?;
    write_columns(w, &GPS_COLUMNS)?;
    for (i, (frame, p)) in tags.iter().enumerate() {
        let g = header
            .local_frame
            .local_to_geo(p)
            .map_err(|e| malformed(0, format!("GPS tag {i}: {e}")))?;
        write_row(
            w,
            &[frame.to_string(), rad(g.latitude), rad(g.longitude), m(g.altitude)],
        )?;
    }
    Ok(())
}

pub fn read_gps_tags<R: BufRead>(r: R) -> Result<(FileHeader, Vec<(u64, LocalPoint)>), IoError> {
    let doc = read_document(r, "gps")?;
    let s = doc.single()?;
    s.expect_columns(&GPS_COLUMNS)?;
    let frame = doc.header.local_frame;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            let g =
                GeoCoordinate::new(r.f64(1)?, r.f64(2)?, r.f64(3)?).map_err(|e| malformed(r.line, e.to_string()))?;
            let p = frame.geo_to_local(&g).map_err(|e| malformed(r.line, e.to_string()))?;
            Ok((r.u64(0)?, p))
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- mesh ----

pub fn write_mesh<W: Write>(w: &mut W, header: &FileHeader, mesh: &TriangleMesh) -> Result<(), IoError> {
    write_header(w, "mesh", header, &[])?;
    writeln!(w, "[vertices]")?;
    write_columns(w, &["index", "x", "y", "z"])?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        let mut f = vec![i.to_string()];
        push_m3(&mut f, v.coords.as_slice());
        write_row(w, &f)?;
    }
    writeln!(w, "[faces]")?;
    write_columns(w, &["index", "a", "b", "c"])?;
    for (i, f) in mesh.faces().iter().enumerate() {
        write_row(
            w,
            &[i.to_string(), f[0].to_string(), f[1].to_string(), f[2].to_string()],
        )?;
    }
    Ok(())
}

fn check_index(r: &Row, expected: usize) -> Result<(), IoError> {
    let i = r.usize(0)?;
    if i != expected {
        return Err(malformed(r.line, format!("expected index {expected}, found {i}")));
    }
    Ok(())
}

pub fn read_mesh<R: BufRead>(r: R) -> Result<(FileHeader, TriangleMesh), IoError> {
    let doc = read_document(r, "mesh")?;
    let vs = doc.section("vertices")?;
    vs.expect_columns(&["index", "x", "y", "z"])?;
    let mut vertices = Vec::new();
    for row in vs.rows() {
        let r = row?;
        check_index(&r, vertices.len())?;
        vertices.push(point(&r, 1)?);
    }
    let fs = doc.section("faces")?;
    fs.expect_columns(&["index", "a", "b", "c"])?;
    let mut faces = Vec::new();
    for row in fs.rows() {
        let r = row?;
        check_index(&r, faces.len())?;
        faces.push([r.usize(1)?, r.usize(2)?, r.usize(3)?]);
    }
    let mesh = TriangleMesh::new(vertices, faces).map_err(|e| malformed(fs.column_line, e.to_string()))?;
    Ok((doc.header, mesh))
}

// ---- ground surface ----

const GROUND_COLUMNS: [&str; 8] = ["degree_u", "degree_v", "n_u", "n_v", "min_x", "max_x", "min_y", "max_y"];

pub fn write_ground<W: Write>(w: &mut W, header: &FileHeader, g: &GroundSurface) -> Result<(), IoError> {
    write_header(
        w,
        "ground",
        header,
        &["surface\ttensor-product NURBS height field, control[i * n_v + j]"],
    )?;
    let (pu, pv) = g.degrees();
    let (nu, nv) = g.grid_size();
    let d = g.domain();
    writeln!(w, "[surface]")?;
    write_columns(w, &GROUND_COLUMNS)?;
    write_row(
        w,
        &[
            pu.to_string(),
            pv.to_string(),
            nu.to_string(),
            nv.to_string(),
            m(d.min_x),
            m(d.max_x),
            m(d.min_y),
            m(d.max_y),
        ],
    )?;
    for (name, knots) in [("knots_u", g.knots_u()), ("knots_v", g.knots_v())] {
        writeln!(w, "[{name}]")?;
        write_columns(w, &["index", "value"])?;
        for (i, k) in knots.iter().enumerate() {
            write_row(w, &[i.to_string(), unit(*k)])?;
        }
    }
    writeln!(w, "[control]")?;
    write_columns(w, &["i", "j", "x", "y", "z", "weight"])?;
    for (idx, (p, wt)) in g.control_points().iter().zip(g.weights()).enumerate() {
        let mut f = vec![(idx / nv).to_string(), (idx % nv).to_string()];
        push_m3(&mut f, p.coords.as_slice());
        f.push(unit(*wt));
        write_row(w, &f)?;
    }
    Ok(())
}

fn knots(s: &Section) -> Result<Vec<f64>, IoError> {
    s.expect_columns(&["index", "value"])?;
    let mut out = Vec::new();
    for row in s.rows() {
        let r = row?;
        check_index(&r, out.len())?;
        out.push(r.f64(1)?);
    }
    Ok(out)
}

pub fn read_ground<R: BufRead>(r: R) -> Result<(FileHeader, GroundSurface), IoError> {
    let doc = read_document(r, "ground")?;
    let s = doc.section("surface")?;
    s.expect_columns(&GROUND_COLUMNS)?;
    let rows: Vec<Row> = s.rows().collect::<Result<_, _>>()?;
    let [r] = rows.as_slice() else {
        return Err(malformed(s.column_line, "[surface] must have exactly one row"));
    };
    let (pu, pv, nu, nv) = (r.usize(0)?, r.usize(1)?, r.usize(2)?, r.usize(3)?);
    let domain = Domain {
        min_x: r.f64(4)?,
        max_x: r.f64(5)?,
        min_y: r.f64(6)?,
        max_y: r.f64(7)?,
    };
    let ku = knots(doc.section("knots_u")?)?;
    let kv = knots(doc.section("knots_v")?)?;
    let cs = doc.section("control")?;
    cs.expect_columns(&["i", "j", "x", "y", "z", "weight"])?;
    let mut control = Vec::new();
    let mut weights = Vec::new();
    for row in cs.rows() {
        let r = row?;
        let idx = control.len();
        let (i, j) = (r.usize(0)?, r.usize(1)?);
        if nv == 0 || (i, j) != (idx / nv, idx % nv) {
            return Err(malformed(r.line, format!("control point ({i}, {j}) out of order")));
        }
        control.push(point(&r, 2)?);
        weights.push(r.f64(5)?);
    }
    if control.len() != nu * nv {
        return Err(malformed(
            cs.column_line,
            format!("expected {} control points, found {}", nu * nv, control.len()),
        ));
    }
    let g = GroundSurface::from_parts(pu, pv, ku, kv, control, weights, domain)
        .map_err(|e| malformed(s.column_line, e.to_string()))?;
    Ok((doc.header, g))
}

// ---- events ----

pub const EVENT_COLUMNS: [&str; 8] = [
    "kind",
    "track_ids",
    "t_event",
    "value",
    "direction_switches",
    "x",
    "y",
    "z",
];

pub fn write_events<W: Write>(w: &mut W, header: &FileHeader, events: &[ScenarioEvent]) -> Result<(), IoError> {
    write_header(
        w,
        "events",
        header,
        &["value\tTTC and PET in s; PARKING time to park in s"],
    )?;
    write_columns(w, &EVENT_COLUMNS)?;
    for e in events {
        let ids: Vec<String> = e.track_ids.iter().map(u64::to_string).collect();
        let switches = match e.value {
            EventValue::Parking { direction_switches, .. } => direction_switches.to_string(),
            EventValue::Seconds(_) => "-".to_string(),
        };
        let mut f = vec![
            e.kind.as_str().to_string(),
            ids.join(","),
            m(e.t_event),
            m(e.value.seconds()),
            switches,
        ];
        push_m3(&mut f, e.location.coords.as_slice());
        write_row(w, &f)?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<(FileHeader, Vec<ScenarioEvent>), IoError> {
    let doc = read_document(r, "events")?;
    let s = doc.single()?;
    s.expect_columns(&EVENT_COLUMNS)?;
    let out = s
        .rows()
        .map(|row| {
            let r = row?;
            let kind = EventKind::parse(r.str(0))
                .ok_or_else(|| malformed(r.line, format!("unknown event kind '{}'", r.str(0))))?;
            let track_ids = r
                .str(1)
                .split(',')
                .map(|t| t.parse().map_err(|_| malformed(r.line, format!("bad track id '{t}'"))))
                .collect::<Result<Vec<u64>, _>>()?;
            let seconds = r.f64(3)?;
            let value = match (kind, r.str(4)) {
                (EventKind::Parking, _) => EventValue::Parking {
                    time_to_park: seconds,
                    direction_switches: r.u32(4)?,
                },
                (_, "-") => EventValue::Seconds(seconds),
                _ => return Err(malformed(r.line, "direction_switches is only valid for PARKING")),
            };
            Ok(ScenarioEvent {
                kind,
                track_ids,
                t_event: r.f64(2)?,
                value,
                location: point(&r, 5)?,
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((doc.header, out))
}

// ---- bundle adjustment problems ----

const BA_CAMERA_COLUMNS: [&str; 16] = [
    "index", "fx", "fy", "cx", "cy", "width", "height", "rx", "ry", "rz", "center_x", "center_y", "center_z", "gps_x",
    "gps_y", "gps_z",
];

pub fn write_ba_problem<W: Write>(w: &mut W, header: &FileHeader, p: &BaProblem) -> Result<(), IoError> {
    write_header(w, "ba_problem", header, &[CAMERA_ANGLES])?;
    writeln!(w, "[problem]")?;
    write_columns(w, &["lambda"])?;
    write_row(w, &[unit(p.lambda)])?;
    writeln!(w, "[cameras]")?;
    write_columns(w, &BA_CAMERA_COLUMNS)?;
    for (i, c) in p.cameras.iter().enumerate() {
        let k = &c.intrinsics;
        let mut f = vec![
            i.to_string(),
            m(k.fx),
            m(k.fy),
            m(k.cx),
            m(k.cy),
            k.width.to_string(),
            k.height.to_string(),
        ];
        f.extend(euler_cols(&c.pose.rotation));
        push_m3(&mut f, c.pose.center().coords.as_slice());
        for j in 0..3 {
            f.push(opt_m(c.gps_prior.map(|g| g[j])));
        }
        write_row(w, &f)?;
    }
    writeln!(w, "[points]")?;
    write_columns(w, &["index", "x", "y", "z"])?;
    for (i, q) in p.points.iter().enumerate() {
        let mut f = vec![i.to_string()];
        push_m3(&mut f, q.coords.as_slice());
        write_row(w, &f)?;
    }
    writeln!(w, "[observations]")?;
    write_columns(w, &["camera", "point", "u", "v"])?;
    for o in &p.observations {
        write_row(
            w,
            &[o.camera.to_string(), o.point.to_string(), m(o.pixel.x), m(o.pixel.y)],
        )?;
    }
    Ok(())
}

pub fn read_ba_problem<R: BufRead>(r: R) -> Result<(FileHeader, BaProblem), IoError> {
    let doc = read_document(r, "ba_problem")?;
    let ps = doc.section("problem")?;
    ps.expect_columns(&["lambda"])?;
    let rows: Vec<Row> = ps.rows().collect::<Result<_, _>>()?;
    let [lr] = rows.as_slice() else {
        return Err(malformed(ps.column_line, "[problem] must have exactly one row"));
    };
    let lambda = lr.f64(0)?;
    let cs = doc.section("cameras")?;
    cs.expect_columns(&BA_CAMERA_COLUMNS)?;
    let mut cameras = Vec::new();
    for row in cs.rows() {
        let r = row?;
        check_index(&r, cameras.len())?;
        cameras.push(BaCamera {
            intrinsics: intrinsics(&r, 1)?,
            pose: Pose::from_center(euler(&r, 7)?, &point(&r, 10)?),
            gps_prior: opt_point(&r, 13)?,
        });
    }
    let qs = doc.section("points")?;
    qs.expect_columns(&["index", "x", "y", "z"])?;
    let mut points = Vec::new();
    for row in qs.rows() {
        let r = row?;
        check_index(&r, points.len())?;
        points.push(point(&r, 1)?);
    }
    let os = doc.section("observations")?;
    os.expect_columns(&["camera", "point", "u", "v"])?;
    let observations = os
        .rows()
        .map(|row| {
            let r = row?;
            Ok(BaObservation {
                camera: r.usize(0)?,
                point: r.usize(1)?,
                pixel: Point2::new(r.f64(2)?, r.f64(3)?),
            })
        })
        .collect::<Result<_, IoError>>()?;
    Ok((
        doc.header,
        BaProblem {
            cameras,
            points,
            observations,
            lambda,
        },
    ))
}

// ---- statistics (write only) ----

pub fn write_class_stats<W: Write>(w: &mut W, header: &FileHeader, stats: &[ClassStats]) -> Result<(), IoError> {
    write_header(w, "class_stats", header, &["units\ts, m, m/s"])?;
    write_columns(
        w,
        &[
            "category",
            "trajectories",
            "mean_duration",
            "mean_distance",
            "mean_speed",
        ],
    )?;
    for s in stats {
        write_row(
            w,
            &[
                s.category.to_string(),
                s.trajectory_count.to_string(),
                m(s.mean_duration),
                m(s.mean_distance),
                m(s.mean_speed),
            ],
        )?;
    }
    Ok(())
}

pub fn write_histogram<W: Write>(w: &mut W, header: &FileHeader, quantity: &str, h: &Histogram) -> Result<(), IoError> {
    write_header(w, "histogram", header, &[&format!("quantity\t{quantity}")])?;
    write_columns(w, &["bin_start", "bin_end", "count"])?;
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(i);
        write_row(w, &[m(lo), m(hi), c.to_string()])?;
    }
    Ok(())
}
