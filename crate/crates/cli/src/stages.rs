use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use skytrack::analytics::{
    class_stats, crossing_zones, histogram, mine_parking, mine_pet, mine_ttc, parent_class_counts,
    trajectories_from_records, EventKind, Histogram, Polygon, ScenarioEvent,
};
use skytrack::camera::{calibrate_recording, smooth_pose_sequence, CameraFrame, FrameStatus};
use skytrack::georef_ba::solve_ba;
use skytrack::ground::{filter_road_points, fit_ground};
use skytrack::io::{self, FileHeader, IoError};
use skytrack::mesh::sample_surface;
use skytrack::refine::{refine_all, RefinementFlag};
use skytrack::synth::{evaluate, generate, median};
use skytrack::tracker::{run_tracker, to_records, TrackerConfig};

use crate::config::files;
use crate::summary::{table, SummaryBuilder};
use crate::{PipelineConfig, PipelineError, StageSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ba,
    Calibrate,
    Ground,
    Refine,
    Track,
    Stats,
    Mine,
    Validate,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ba => "ba",
            Stage::Calibrate => "calibrate",
            Stage::Ground => "ground",
            Stage::Refine => "refine",
            Stage::Track => "track",
            Stage::Stats => "stats",
            Stage::Mine => "mine",
            Stage::Validate => "validate",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// Stages chained by `run-all`, in order.
pub const RUN_ALL_STAGES: [Stage; 7] = [
    Stage::Ba,
    Stage::Calibrate,
    Stage::Ground,
    Stage::Refine,
    Stage::Track,
    Stage::Stats,
    Stage::Mine,
];

pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    std::fs::create_dir_all(&cfg.out).map_err(|source| PipelineError::Write {
        path: cfg.out.clone(),
        source: IoError::Io(source),
    })?;
    match stage {
        Stage::Synth => synth(cfg),
        Stage::Ba => ba(cfg),
        Stage::Calibrate => calibrate(cfg),
        Stage::Ground => ground(cfg),
        Stage::Refine => refine(cfg),
        Stage::Track => track(cfg),
        Stage::Stats => stats(cfg),
        Stage::Mine => mine(cfg),
        Stage::Validate => validate(cfg),
        Stage::Evaluate => evaluation(cfg),
    }
}

/// Runs [`RUN_ALL_STAGES`] in order, stopping at the first failure.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<StageSummary>, PipelineError> {
    RUN_ALL_STAGES.iter().map(|&s| run_stage(s, cfg)).collect()
}

fn require(paths: &[&Path]) -> Result<(), PipelineError> {
    match paths.iter().find(|p| !p.is_file()) {
        Some(p) => Err(PipelineError::MissingInput(p.to_path_buf())),
        None => Ok(()),
    }
}

fn read<T>(
    path: &Path,
    f: impl FnOnce(BufReader<File>) -> Result<(FileHeader, T), IoError>,
) -> Result<(FileHeader, T), PipelineError> {
    io::open(path).and_then(f).map_err(|source| PipelineError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), IoError>) -> Result<(), PipelineError> {
    let wrap = |source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut w = io::create(path).map_err(wrap)?;
    f(&mut w).map_err(wrap)?;
    w.flush().map_err(|e| wrap(IoError::Io(e)))
}

fn stage_error(stage: Stage, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.name(),
        message: e.to_string(),
    }
}

/// Fails when two inputs disagree on their local frame.
fn same_frame(stage: Stage, inputs: &[(&Path, &FileHeader)]) -> Result<(), PipelineError> {
    let (p0, h0) = inputs[0];
    for (p, h) in &inputs[1..] {
        if h.local_frame != h0.local_frame {
            return Err(stage_error(
                stage,
                format!("{} and {} use different local frames", p0.display(), p.display()),
            ));
        }
    }
    Ok(())
}

fn synth(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Synth;
    let scenario = cfg.scenario()?;
    let out = generate(&scenario).map_err(|e| stage_error(stage, e))?;
    let t = &out.truth;
    let header = FileHeader::new(format!("synth-{}", scenario.seed), scenario.rate_hz, t.local_frame);
    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    if let Some(p) = &cfg.synth.scenario {
        s.input(p);
    }

    let path = cfg.output(files::SCENARIO);
    let text = toml::to_string(&scenario).map_err(|e| stage_error(stage, e))?;
    std::fs::write(&path, text).map_err(|source| PipelineError::Write {
        path: path.clone(),
        source: IoError::Io(source),
    })?;
    s.output(&path);

    let first = out.correspondences.first().map_or(0, |(f, _)| *f);
    let init = CameraFrame {
        frame_index: first,
        timestamp: first as f64 / scenario.rate_hz,
        intrinsics: t.intrinsics,
        pose: out.initial_pose,
        gps_prior: None,
        inlier_count: 0,
        rms_reprojection: f64::NAN,
        status: FrameStatus::Unlocalized,
    };
    let outputs: [(&str, Box<dyn Fn(&mut BufWriter<File>) -> Result<(), IoError>>); 7] = [
        (files::MESH, Box::new(|w| io::write_mesh(w, &header, &t.mesh))),
        (
            files::CORRESPONDENCES,
            Box::new(|w| io::write_correspondences(w, &header, &out.correspondences)),
        ),
        (
            files::CAMERA_INIT,
            Box::new(|w| io::write_camera_frames(w, &header, std::slice::from_ref(&init))),
        ),
        (files::GPS, Box::new(|w| io::write_gps_tags(w, &header, &out.gps_tags))),
        (
            files::DETECTIONS,
            Box::new(|w| io::write_detections(w, &header, &out.detections)),
        ),
        (
            files::BA_PROBLEM,
            Box::new(|w| io::write_ba_problem(w, &header, &out.ba_problem)),
        ),
        (files::TRUTH, Box::new(|w| io::write_truth(w, &header, &t.objects))),
    ];
    for (name, f) in outputs {
        let path = cfg.output(name);
        write(&path, f)?;
        s.output(&path);
    }

    #[derive(Serialize)]
    struct Results {
        frames: usize,
        objects: usize,
        truth_states: usize,
        detections: usize,
        mesh_vertices: usize,
        mesh_faces: usize,
    }
    let objects: std::collections::BTreeSet<u64> = t.objects.iter().map(|o| o.object_id).collect();
    s.finish(table(&Results {
        frames: out.correspondences.len(),
        objects: objects.len(),
        truth_states: t.objects.len(),
        detections: out.detections.len(),
        mesh_vertices: t.mesh.vertices().len(),
        mesh_faces: t.mesh.faces().len(),
    }))
}

fn ba(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Ba;
    let input = cfg.input(&cfg.inputs.ba_problem, files::BA_PROBLEM);
    require(&[&input])?;
    let (header, mut problem) = read(&input, io::read_ba_problem)?;
    if let Some(l) = cfg.ba.lambda {
        problem.lambda = l;
    }
    let (solved, report) = solve_ba(&problem, &cfg.ba.solver).map_err(|e| stage_error(stage, e))?;
    let output = cfg.output(files::BA_SOLUTION);
    write(&output, |w| io::write_ba_problem(w, &header, &solved))?;

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&input);
    s.output(&output);
    s.parameters(&cfg.ba);
    let mut results = table(&report);
    results.insert("lambda".into(), problem.lambda.into());
    results.insert("cameras".into(), (solved.cameras.len() as i64).into());
    results.insert("points".into(), (solved.points.len() as i64).into());
    results.insert("observations".into(), (solved.observations.len() as i64).into());
    s.finish(results)
}

fn calibrate(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Calibrate;
    let corr_path = cfg.input(&cfg.inputs.correspondences, files::CORRESPONDENCES);
    let init_path = cfg.input(&cfg.inputs.camera_init, files::CAMERA_INIT);
    require(&[&corr_path, &init_path])?;
    // An explicitly configured GPS file must exist; the default one is optional.
    let gps_path = match &cfg.inputs.gps {
        Some(p) => {
            require(&[p])?;
            Some(p.clone())
        }
        None => Some(cfg.output(files::GPS)).filter(|p| p.is_file()),
    };

    let (header, frames) = read(&corr_path, io::read_correspondences)?;
    let (init_header, init) = read(&init_path, io::read_camera_frames)?;
    let Some(init) = init.first() else {
        return Err(stage_error(stage, format!("{} has no frames", init_path.display())));
    };
    same_frame(stage, &[(&corr_path, &header), (&init_path, &init_header)])?;

    let ransac = cfg.calibrate.ransac_config(cfg.seed);
    let mut out = calibrate_recording(
        &frames,
        &init.intrinsics,
        &init.pose,
        &ransac,
        cfg.calibrate.intrinsics,
        header.rate_hz,
    );
    if cfg.calibrate.smooth {
        out = smooth_pose_sequence(&out, &cfg.calibrate.smoothing).map_err(|e| stage_error(stage, e))?;
    }
    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&corr_path);
    s.input(&init_path);
    if let Some(p) = &gps_path {
        let (gps_header, tags) = read(p, io::read_gps_tags)?;
        same_frame(stage, &[(&corr_path, &header), (p, &gps_header)])?;
        let tags: BTreeMap<u64, _> = tags.into_iter().collect();
        for f in &mut out {
            f.gps_prior = tags.get(&f.frame_index).copied();
        }
        s.input(p);
    }
    if !out.iter().any(|f| f.is_usable()) {
        return Err(stage_error(stage, "no frame could be localized"));
    }
    let output = cfg.output(files::CAMERA_FRAMES);
    write(&output, |w| io::write_camera_frames(w, &header, &out))?;
    s.output(&output);

    #[derive(Serialize)]
    struct Parameters<'a> {
        intrinsics: skytrack::camera::IntrinsicsMode,
        ransac: &'a skytrack::camera::RansacConfig,
        smooth: bool,
        smoothing: &'a skytrack::camera::PoseSmoothingConfig,
    }
    s.parameters(&Parameters {
        intrinsics: cfg.calibrate.intrinsics,
        ransac: &ransac,
        smooth: cfg.calibrate.smooth,
        smoothing: &cfg.calibrate.smoothing,
    });
    #[derive(Serialize)]
    struct Results {
        frames: usize,
        localized: usize,
        interpolated: usize,
        unlocalized: usize,
        min_inliers: usize,
        median_rms_px: f64,
    }
    let count = |st: FrameStatus| out.iter().filter(|f| f.status == st).count();
    let rms: Vec<f64> = out
        .iter()
        .filter(|f| f.status == FrameStatus::Localized)
        .map(|f| f.rms_reprojection)
        .collect();
    s.finish(table(&Results {
        frames: out.len(),
        localized: count(FrameStatus::Localized),
        interpolated: count(FrameStatus::Interpolated),
        unlocalized: count(FrameStatus::Unlocalized),
        min_inliers: out
            .iter()
            .filter(|f| f.is_usable())
            .map(|f| f.inlier_count)
            .min()
            .unwrap_or(0),
        median_rms_px: median(&rms),
    }))
}

fn ground(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Ground;
    let input = cfg.input(&cfg.inputs.mesh, files::MESH);
    require(&[&input])?;
    let (header, mesh) = read(&input, io::read_mesh)?;
    let g = &cfg.ground;
    let samples = sample_surface(&mesh, g.sample_density, cfg.seed).map_err(|e| stage_error(stage, e))?;
    let road = filter_road_points(&samples, &g.filter).map_err(|e| stage_error(stage, e))?;
    let surface = fit_ground(&road, &g.fit).map_err(|e| stage_error(stage, e))?;
    let output = cfg.output(files::GROUND);
    write(&output, |w| io::write_ground(w, &header, &surface))?;

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&input);
    s.output(&output);
    s.parameters(g);
    #[derive(Serialize)]
    struct Results {
        samples: usize,
        road_points: usize,
        control_grid: [usize; 2],
        rms_residual: f64,
    }
    let (nu, nv) = surface.grid_size();
    s.finish(table(&Results {
        samples: samples.len(),
        road_points: road.len(),
        control_grid: [nu, nv],
        rms_residual: (surface.residual_sum_squares(&road) / road.len() as f64).sqrt(),
    }))
}

fn refine(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Refine;
    let det_path = cfg.input(&cfg.inputs.detections, files::DETECTIONS);
    let frames_path = cfg.output(files::CAMERA_FRAMES);
    let ground_path = cfg.output(files::GROUND);
    require(&[&det_path, &frames_path, &ground_path])?;
    let (header, detections) = read(&det_path, io::read_detections)?;
    let (frames_header, frames) = read(&frames_path, io::read_camera_frames)?;
    let (ground_header, surface) = read(&ground_path, io::read_ground)?;
    same_frame(
        stage,
        &[
            (&det_path, &header),
            (&frames_path, &frames_header),
            (&ground_path, &ground_header),
        ],
    )?;
    let refined = refine_all(&detections, &frames, &surface);
    let output = cfg.output(files::REFINED);
    write(&output, |w| io::write_refined(w, &header, &refined))?;

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&det_path);
    s.input(&frames_path);
    s.input(&ground_path);
    s.output(&output);
    #[derive(Serialize)]
    struct Results {
        detections: usize,
        refined: usize,
        ground_snapped: usize,
        depth_fallback: usize,
        skipped: usize,
    }
    let count = |f: RefinementFlag| refined.iter().filter(|r| r.flag == f).count();
    s.finish(table(&Results {
        detections: detections.len(),
        refined: refined.len(),
        ground_snapped: count(RefinementFlag::GroundSnapped),
        depth_fallback: count(RefinementFlag::DepthFallback),
        skipped: detections.len() - refined.len(),
    }))
}

fn track(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Track;
    let input = cfg.output(files::REFINED);
    require(&[&input])?;
    let (header, refined) = read(&input, io::read_refined)?;
    let tracker = TrackerConfig {
        rate_hz: header.rate_hz,
        ..cfg.tracker
    };
    let tracks = run_tracker(&refined, &tracker).map_err(|e| stage_error(stage, e))?;
    let records = to_records(&tracks);
    let output = cfg.output(files::TRAJECTORIES);
    write(&output, |w| io::write_trajectories(w, &header, &records))?;

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&input);
    s.output(&output);
    s.parameters(&tracker);
    #[derive(Serialize)]
    struct Results {
        detections: usize,
        tracks: usize,
        records: usize,
    }
    s.finish(table(&Results {
        detections: refined.len(),
        tracks: tracks.len(),
        records: records.len(),
    }))
}

fn stats(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Stats;
    let input = cfg.output(files::TRAJECTORIES);
    require(&[&input])?;
    let (header, records) = read(&input, io::read_trajectories)?;
    let trajectories = trajectories_from_records(&records);
    let stats = class_stats(&trajectories, header.rate_hz);
    let output = cfg.output(files::CLASS_STATS);
    write(&output, |w| io::write_class_stats(w, &header, &stats))?;

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&input);
    s.output(&output);
    let parents: BTreeMap<String, usize> = parent_class_counts(trajectories.iter().map(|t| t.category))
        .into_iter()
        .map(|(p, n)| (p.as_str().to_string(), n))
        .collect();
    let categories: BTreeMap<String, usize> = stats
        .iter()
        .map(|c| (c.category.as_str().to_string(), c.trajectory_count))
        .collect();
    #[derive(Serialize)]
    struct Results {
        trajectories: usize,
        records: usize,
        parent_classes: BTreeMap<String, usize>,
        categories: BTreeMap<String, usize>,
    }
    s.finish(table(&Results {
        trajectories: trajectories.len(),
        records: records.len(),
        parent_classes: parents,
        categories,
    }))
}

fn histogram_or_empty(values: &[f64], bin: f64) -> Result<Histogram, PipelineError> {
    if values.is_empty() {
        return Ok(Histogram {
            bin_width: bin,
            start: 0.0,
            counts: Vec::new(),
        });
    }
    histogram(values, bin).map_err(|e| stage_error(Stage::Mine, e))
}

fn mine(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Mine;
    let input = cfg.output(files::TRAJECTORIES);
    require(&[&input])?;
    let (header, records) = read(&input, io::read_trajectories)?;
    let trajectories = trajectories_from_records(&records);
    let m = &cfg.mining;
    let rate = header.rate_hz;

    let mut events: Vec<ScenarioEvent> = mine_ttc(&trajectories, rate, &m.thresholds);
    let zones = crossing_zones(&trajectories, m.thresholds.zone_cell);
    events.extend(mine_pet(&trajectories, &zones, rate, &m.thresholds));
    for region in &m.parking_regions {
        let polygon = Polygon::new(region.iter().map(|p| (*p).into()).collect()).map_err(|e| stage_error(stage, e))?;
        events.extend(mine_parking(&trajectories, &polygon, rate, &m.thresholds));
    }
    let values = |k: EventKind| -> Vec<f64> {
        events
            .iter()
            .filter(|e| e.kind == k)
            .map(|e| e.value.seconds())
            .collect()
    };
    let (ttc, pet) = (values(EventKind::Ttc), values(EventKind::Pet));

    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&input);
    let events_path = cfg.output(files::EVENTS);
    write(&events_path, |w| io::write_events(w, &header, &events))?;
    s.output(&events_path);
    for (name, quantity, vals, bin) in [
        (files::TTC_HISTOGRAM, "ttc", &ttc, m.ttc_bin),
        (files::PET_HISTOGRAM, "pet", &pet, m.pet_bin),
    ] {
        let h = histogram_or_empty(vals, bin)?;
        let path = cfg.output(name);
        write(&path, |w| io::write_histogram(w, &header, quantity, &h))?;
        s.output(&path);
    }
    s.parameters(m);
    #[derive(Serialize)]
    struct Results {
        trajectories: usize,
        conflict_zones: usize,
        ttc_events: usize,
        pet_events: usize,
        parking_events: usize,
    }
    s.finish(table(&Results {
        trajectories: trajectories.len(),
        conflict_zones: zones.len(),
        ttc_events: ttc.len(),
        pet_events: pet.len(),
        parking_events: events.iter().filter(|e| e.kind == EventKind::Parking).count(),
    }))
}

fn validate(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Validate;
    let Some(dir) = &cfg.inputs.dataset else {
        return Err(PipelineError::Config("validate needs a dataset directory".into()));
    };
    if !dir.is_dir() {
        return Err(PipelineError::MissingInput(dir.clone()));
    }
    let report = skytrack::io::validate_dataset(dir, &cfg.validation).map_err(|source| PipelineError::Read {
        path: dir.clone(),
        source,
    })?;
    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    for f in &report.files {
        s.input(&f.path);
    }
    s.parameters(&cfg.validation);

    #[derive(Serialize)]
    struct FileResult {
        path: String,
        records: usize,
        tracks: usize,
        findings: Vec<String>,
    }
    #[derive(Serialize)]
    struct Results {
        files: usize,
        findings: usize,
        clean: bool,
        file: Vec<FileResult>,
    }
    s.finish(table(&Results {
        files: report.files.len(),
        findings: report.finding_count(),
        clean: report.is_clean(),
        file: report
            .files
            .iter()
            .map(|f| FileResult {
                path: file_name(&f.path),
                records: f.records,
                tracks: f.tracks,
                findings: f.findings.iter().map(|x| x.to_string()).collect(),
            })
            .collect(),
    }))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn evaluation(cfg: &PipelineConfig) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Evaluate;
    let tracks_path = cfg.output(files::TRAJECTORIES);
    let truth_path: PathBuf = cfg.input(&cfg.inputs.truth, files::TRUTH);
    require(&[&tracks_path, &truth_path])?;
    let (h1, records) = read(&tracks_path, io::read_trajectories)?;
    let (h2, truth) = read(&truth_path, io::read_truth)?;
    same_frame(stage, &[(&tracks_path, &h1), (&truth_path, &h2)])?;
    let report = evaluate(&records, &truth, cfg.evaluation.gate).map_err(|e| stage_error(stage, e))?;
    let mut s = SummaryBuilder::new(stage.name(), cfg.seed, &cfg.out);
    s.input(&tracks_path);
    s.input(&truth_path);
    s.parameters(&cfg.evaluation);
    s.finish(table(&report))
}
