use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crownseg::flows::flows_from_labels;
use crownseg::io::{
    read_flows, read_labels_png, read_mask_png, read_prob, sha256_file, write_band_png,
    write_flows, write_labels_png, write_mask_png, write_prob, Manifest,
};
use crownseg::metrics::{summary, Report, ScoredPrediction};
use crownseg::pipeline::{
    plan_tiles, run_segmentation, run_tiled, PipelineConfig, RunCounts, RunOutcome,
};
use crownseg::raster::ProbabilityMap;
use crownseg::synth::generate_scene;
use crownseg::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::args::{Command, EvalArgs, FlowsArgs, PipelineArgs, SegmentArgs, SynthArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub id: String,
    pub message: String,
}

/// JSON document every command emits, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// Written files and their SHA-256 digests.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<RunCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_tiles: Option<usize>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            status: Status::Ok,
            error: None,
            outputs: BTreeMap::new(),
            counts: None,
            metrics: None,
            n_tiles: None,
            timings_ms: BTreeMap::new(),
        }
    }

    fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.timings_ms
            .insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Exit status for a failed command: 3 for internal invariant violations, 2 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_internal() {
        3
    } else {
        2
    }
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Flows(_) => "flows",
        Command::Segment(_) => "segment",
        Command::Eval(_) => "eval",
        Command::Pipeline(_) => "pipeline",
    }
}

/// Where the report goes; `None` means stdout.
pub fn report_path(c: &Command) -> Option<&Path> {
    match c {
        Command::Segment(a) => a.report.as_deref(),
        Command::Pipeline(a) => a.inputs.report.as_deref(),
        Command::Eval(a) => a.out.as_deref(),
        Command::Synth(_) | Command::Flows(_) => None,
    }
}

/// Runs a command; on failure the report carries the error and the
/// error itself is returned alongside.
pub fn execute(c: &Command) -> (RunReport, Option<Error>) {
    let mut report = RunReport::new(name(c));
    let result = match c {
        Command::Synth(a) => cmd_synth(a, &mut report),
        Command::Flows(a) => cmd_flows(a, &mut report),
        Command::Segment(a) => cmd_segment(a, &mut report),
        Command::Eval(a) => cmd_eval(a, &mut report),
        Command::Pipeline(a) => cmd_pipeline(a, &mut report),
    };
    match result {
        Ok(()) => (report, None),
        Err(e) => {
            report.status = Status::Error;
            report.error = Some(ErrorInfo {
                id: e.id().to_string(),
                message: e.to_string(),
            });
            (report, Some(e))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn cmd_synth(a: &SynthArgs, report: &mut RunReport) -> Result<()> {
    let spec = a.spec();
    spec.validate()?;
    let scene = report.time("generate", || generate_scene(&spec))?;
    create_dir(&a.out)?;
    let manifest = report.time("write", || {
        let mut manifest = Manifest {
            scene: Some(spec.clone()),
            ..Default::default()
        };
        for (i, band) in scene.image.iter().enumerate() {
            let rel = format!("image_band{i}.png");
            write_band_png(a.out.join(&rel), band)?;
            manifest.image.push(rel);
        }
        write_labels_png(a.out.join("labels.png"), &scene.labels)?;
        write_mask_png(a.out.join("semantic.png"), &scene.semantic)?;
        manifest.labels = Some("labels.png".into());
        manifest.semantic = Some("semantic.png".into());
        manifest.seal(&a.out)?;
        manifest.write(a.out.join("manifest.json"))?;
        Ok(manifest)
    })?;
    for rel in manifest.paths() {
        report.record_output(&a.out.join(rel))?;
    }
    report.record_output(&a.out.join("manifest.json"))?;
    report.counts = Some(RunCounts {
        n_instances: scene.labels.count(),
        ..Default::default()
    });
    Ok(())
}

pub fn cmd_flows(a: &FlowsArgs, report: &mut RunReport) -> Result<()> {
    let labels = read_labels_png(&a.labels)?;
    let v = report.time("flows", || Ok(flows_from_labels(&labels)))?;
    let p = ProbabilityMap::from_labels(&labels);
    create_dir(&a.out)?;
    let (fp, pp) = (a.out.join("flows.npy"), a.out.join("prob.npy"));
    write_flows(&fp, &v)?;
    write_prob(&pp, &p)?;
    report.record_output(&fp)?;
    report.record_output(&pp)?;
    report.counts = Some(RunCounts {
        n_instances: labels.count(),
        ..Default::default()
    });
    Ok(())
}

fn run_and_write(
    a: &SegmentArgs,
    report: &mut RunReport,
    run: impl FnOnce(
        &crownseg::raster::FlowField,
        &ProbabilityMap,
        Option<&crownseg::raster::SemanticMask>,
    ) -> Result<RunOutcome>,
) -> Result<()> {
    let (v, p, m) = report.time("load", || {
        let v = read_flows(&a.flows, a.tuning.strict)?;
        let p = read_prob(&a.prob)?;
        let m = a.semantic.as_ref().map(read_mask_png).transpose()?;
        Ok((v, p, m))
    })?;
    let out = report.time("segment", || run(&v, &p, m.as_ref()))?;
    write_output_labels(&a.out, &out)?;
    report.record_output(&a.out)?;
    report.counts = Some(out.counts);
    Ok(())
}

fn write_output_labels(path: &PathBuf, out: &RunOutcome) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_labels_png(path, &out.labels)
}

pub fn cmd_segment(a: &SegmentArgs, report: &mut RunReport) -> Result<()> {
    let cfg: PipelineConfig = a.tuning.config(0, 0);
    cfg.validate()?;
    run_and_write(a, report, |v, p, m| run_segmentation(v, p, m, &cfg))
}

pub fn cmd_pipeline(a: &PipelineArgs, report: &mut RunReport) -> Result<()> {
    let cfg = a.inputs.tuning.config(a.tile, a.overlap);
    cfg.validate_tiling()?;
    let mut n_tiles = 0;
    run_and_write(&a.inputs, report, |v, p, m| {
        let (h, w) = v.dims();
        n_tiles = plan_tiles(h, w, cfg.tile, cfg.overlap).len();
        run_tiled(v, p, m, &cfg)
    })?;
    report.n_tiles = Some(n_tiles);
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, report: &mut RunReport) -> Result<()> {
    let gt = read_labels_png(&a.gt)?;
    let pred = read_labels_png(&a.pred)?;
    let sp = match &a.prob {
        Some(path) => ScoredPrediction::from_probability(pred, &read_prob(path)?)?,
        None => ScoredPrediction::uniform(pred),
    };
    report.metrics = Some(report.time("eval", || summary(&gt, &sp, 0.5))?);
    Ok(())
}
