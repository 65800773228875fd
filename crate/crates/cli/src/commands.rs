use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use spinewalker::labeling::{label_instances, InstancesFile};
use spinewalker::metrics::{evaluate_case, summarize, write_report_csv, write_report_json, CaseResult, SummaryReport};
use spinewalker::phantom::generate_phantom;
use spinewalker::sampler::{augment, write_patch, PatchSampler};
use spinewalker::segbackend::{ExternalSegmenter, OracleSegmenter};
use spinewalker::traversal::traverse;
use spinewalker::volgrid::{read_volgrid, resample, resample_labels, write_volgrid, Interp};
use spinewalker::{LabelMap, Segmenter, SpineGroundTruth, Volume};

use crate::config::{BackendConfig, RunConfig};

pub const MANIFEST: &str = "run_manifest.json";
pub const INSTANCES_JSON: &str = "instances.json";
/// Label map prefix inside each case directory of a `segment` run.
pub const INSTANCES_MAP: &str = "instances";

/// Mixed into patch seeds to draw the augmentation independently.
const AUGMENT_SALT: u64 = 0xa076_1d64_78bd_642f;

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, String>,
}

pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig, inputs: BTreeMap<&str, String>) -> Result<()> {
    let m = Manifest { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), command, config, inputs };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_vec_pretty(&m)?).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn show(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

/// Case name of a volume prefix: its file name without the volgrid suffix.
fn case_id(prefix: &Path) -> String {
    let name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".vgrid.json").or_else(|| name.strip_suffix(".vgrid.raw")).unwrap_or(&name).to_string()
}

/// Expands directories into the intensity volumes they hold (label maps of
/// phantom truth are skipped); anything else is taken as a volume prefix.
pub fn resolve_volumes(inputs: &[PathBuf]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if let Some(stem) = name.strip_suffix(".vgrid.json") {
                    if !stem.ends_with(".labels") {
                        found.push(stem.to_string());
                    }
                }
            }
            found.sort();
            out.extend(found.into_iter().map(|s| (s.clone(), input.join(s))));
        } else {
            out.push((case_id(input), input.clone()));
        }
    }
    ensure!(!out.is_empty(), "no volumes found in {}", show(inputs));
    let mut ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("two input volumes share the case name {}", w[0]);
    }
    Ok(out)
}

/// Truth prefix for a case: `truth/<case>` when `truth` is a directory.
fn truth_prefix(truth: &Path, case: &str, n_cases: usize) -> Result<PathBuf> {
    if truth.is_dir() {
        Ok(truth.join(case))
    } else {
        ensure!(n_cases == 1, "--truth must be a directory when segmenting several volumes");
        Ok(truth.to_path_buf())
    }
}

fn is_unit_spacing(s: [f64; 3]) -> bool {
    s.iter().all(|&v| (v - 1.0).abs() < 1e-9)
}

fn load_volume(prefix: &Path) -> Result<Volume> {
    let vol: Volume = read_volgrid(prefix).with_context(|| format!("reading volume {}", prefix.display()))?;
    if is_unit_spacing(vol.spacing()) {
        return Ok(vol);
    }
    debug!("resampling {} from {:?} mm to 1 mm", prefix.display(), vol.spacing());
    Ok(resample(&vol, [1.0; 3], Interp::Trilinear)?)
}

fn load_truth(prefix: &Path) -> Result<SpineGroundTruth> {
    let truth = SpineGroundTruth::load(prefix).with_context(|| format!("reading truth {}", prefix.display()))?;
    if is_unit_spacing(truth.labels.spacing()) {
        return Ok(truth);
    }
    Ok(SpineGroundTruth { labels: resample_labels(&truth.labels, [1.0; 3])?, ..truth })
}

/// Stable per-case salt so results do not depend on processing order.
fn case_salt(case: &str) -> u64 {
    case.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    ensure!(jobs >= 1, "--jobs must be at least 1");
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

// --- phantom ---------------------------------------------------------------

pub fn phantom(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    create_dir(out)?;
    for i in 0..count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let (vol, truth) = generate_phantom(&cfg.phantom, seed)?;
        let prefix = out.join(format!("case_{i:03}"));
        write_volgrid(&prefix, &vol)?;
        truth.save(&prefix)?;
        info!("wrote {} ({} vertebrae, seed {seed})", prefix.display(), truth.n_instances());
    }
    let inputs = BTreeMap::from([("count", count.to_string()), ("out", out.display().to_string())]);
    write_manifest(out, "phantom", cfg, inputs)?;
    println!("wrote {count} phantoms to {}", out.display());
    Ok(())
}

// --- sample ----------------------------------------------------------------

pub fn sample(cfg: &RunConfig, vol: &Path, truth: &Path, count: u64, out: &Path) -> Result<()> {
    let volume = load_volume(vol)?;
    let truth_gt = load_truth(truth)?;
    ensure!(volume.dims() == truth_gt.labels.dims(), "volume and truth grids differ");
    let sampler = PatchSampler::new(&volume, &truth_gt, &cfg.sampler, cfg.seed)?;
    create_dir(out)?;
    let mut empty = 0;
    for i in 0..count {
        let p = sampler.patch(i)?;
        let p = augment(&p, &cfg.sampler.augmentation, p.seed ^ AUGMENT_SALT)?;
        empty += usize::from(p.is_empty());
        write_patch(out, &format!("patch_{i:05}"), &p)?;
    }
    let inputs = BTreeMap::from([
        ("vol", vol.display().to_string()),
        ("truth", truth.display().to_string()),
        ("count", count.to_string()),
        ("out", out.display().to_string()),
    ]);
    write_manifest(out, "sample", cfg, inputs)?;
    println!("wrote {count} patches ({empty} empty) to {}", out.display());
    Ok(())
}

// --- segment ---------------------------------------------------------------

fn make_segmenter<'a>(
    backend: &BackendConfig,
    truth: Option<&'a SpineGroundTruth>,
    seed: u64,
) -> Result<Box<dyn Segmenter + 'a>> {
    Ok(match backend {
        BackendConfig::Oracle { noise_sigma } => {
            let truth = truth.context("the oracle backend needs --truth")?;
            Box::new(OracleSegmenter::new(truth, *noise_sigma, seed))
        }
        BackendConfig::External { command, timeout_s } => {
            let (program, args) = command.split_first().context("the external backend needs a command")?;
            Box::new(ExternalSegmenter::spawn(program, args, Duration::from_secs_f64(*timeout_s))?)
        }
    })
}

fn segment_case(cfg: &RunConfig, case: &str, vol: &Path, truth: Option<&Path>, out: &Path) -> Result<usize> {
    let volume = load_volume(vol)?;
    let truth = truth.map(load_truth).transpose()?;
    if let Some(t) = &truth {
        ensure!(volume.dims() == t.labels.dims(), "{case}: volume and truth grids differ");
    }
    let mut seg = make_segmenter(&cfg.backend, truth.as_ref(), cfg.seed ^ case_salt(case))?;
    let result = traverse(&volume, seg.as_mut(), &cfg.traversal).map_err(|e| {
        warn!("{case}: backend failed after {} instances", e.partial.instances.len());
        anyhow::Error::new(e).context(format!("segmenting {case}"))
    })?;
    let labeling = label_instances(&result, cfg.labeling.sigma)?;
    let dir = out.join(case);
    create_dir(&dir)?;
    InstancesFile::new(&result, labeling.as_ref()).save(&dir.join(INSTANCES_JSON))?;
    write_volgrid(&dir.join(INSTANCES_MAP), &result.labelmap(volume.dims(), volume.spacing()))?;
    info!(
        "{case}: {} instances, {:?}, {} backend calls",
        result.instances.len(),
        result.termination,
        result.calls
    );
    Ok(result.instances.len())
}

pub fn segment(cfg: &RunConfig, vols: &[PathBuf], truth: Option<&Path>, out: &Path, jobs: usize) -> Result<()> {
    let cases = resolve_volumes(vols)?;
    let truths = cases
        .iter()
        .map(|(id, _)| truth.map(|t| truth_prefix(t, id, cases.len())).transpose())
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let counts = pool(jobs)?.install(|| {
        cases
            .par_iter()
            .zip(&truths)
            .map(|((id, vol), t)| segment_case(cfg, id, vol, t.as_deref(), out))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut inputs = BTreeMap::from([("vol", show(vols)), ("out", out.display().to_string())]);
    if let Some(t) = truth {
        inputs.insert("truth", t.display().to_string());
    }
    write_manifest(out, "segment", cfg, inputs)?;
    println!("segmented {} volumes ({} instances) into {}", cases.len(), counts.iter().sum::<usize>(), out.display());
    Ok(())
}

// --- eval / report ---------------------------------------------------------

/// Case directories of a `segment` output, sorted by name.
fn prediction_cases(pred: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(pred).with_context(|| format!("listing {}", pred.display()))? {
        let entry = entry?;
        if entry.path().join(INSTANCES_JSON).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    ensure!(!ids.is_empty(), "no predictions ({INSTANCES_JSON}) under {}", pred.display());
    Ok(ids)
}

/// `None` when the truth has no L1, which leaves nothing to score.
fn eval_case(case: &str, pred: &Path, truth: &Path) -> Result<Option<CaseResult>> {
    let truth = load_truth(&truth.join(case))?;
    if truth.l1_instance.is_none() {
        warn!("{case}: truth has no L1, skipped");
        return Ok(None);
    }
    let dir = pred.join(case);
    let file = InstancesFile::load(&dir.join(INSTANCES_JSON)).with_context(|| format!("reading {case} predictions"))?;
    let labels: LabelMap = read_volgrid(&dir.join(INSTANCES_MAP))?;
    ensure!(labels.dims() == truth.labels.dims(), "{case}: prediction and truth grids differ");
    Ok(Some(evaluate_case(case, file.l1_centroid_mm, &labels, file.instances.len(), &truth)?))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_reports(report_path: &Path, summary: &SummaryReport, cases: &[CaseResult]) -> Result<()> {
    write_report_json(report_path, summary)?;
    write_report_csv(&sibling(report_path, "csv"), cases)?;
    std::fs::write(sibling(report_path, "cases.json"), serde_json::to_vec_pretty(cases)?)?;
    Ok(())
}

fn print_summary(s: &SummaryReport) {
    println!(
        "{} cases: L1 accuracy {:.3} ({}/{}), error avg {} / median {} mm, mean dice {}",
        s.n_cases,
        s.l1_accuracy,
        s.n_correct,
        s.n_cases,
        s.avg_err_mm.map_or("-".into(), |v| format!("{v:.2}")),
        s.median_err_mm.map_or("-".into(), |v| format!("{v:.2}")),
        s.mean_dice.map_or("-".into(), |v| format!("{v:.3}")),
    );
}

fn report_dir(report: &Path) -> Result<PathBuf> {
    let dir = report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    create_dir(&dir)?;
    Ok(dir)
}

pub fn eval(cfg: &RunConfig, pred: &Path, truth: &Path, report: &Path, jobs: usize) -> Result<()> {
    let ids = prediction_cases(pred)?;
    let cases: Vec<CaseResult> = pool(jobs)?
        .install(|| ids.par_iter().map(|id| eval_case(id, pred, truth)).collect::<Result<Vec<_>>>())?
        .into_iter()
        .flatten()
        .collect();
    ensure!(!cases.is_empty(), "none of the {} cases has an L1 in its truth", ids.len());
    let summary = summarize(&cases)?;
    let dir = report_dir(report)?;
    write_reports(report, &summary, &cases)?;
    let inputs = BTreeMap::from([
        ("pred", pred.display().to_string()),
        ("truth", truth.display().to_string()),
        ("report", report.display().to_string()),
    ]);
    write_manifest(&dir, "eval", cfg, inputs)?;
    print_summary(&summary);
    Ok(())
}

/// Merges the per-case files written by `eval` into one report.
pub fn report(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut cases: Vec<CaseResult> = Vec::new();
    for path in inputs {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let part: Vec<CaseResult> =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        cases.extend(part);
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if let Some(w) = cases.windows(2).find(|w| w[0].case_id == w[1].case_id) {
        bail!("case {} appears in more than one input", w[0].case_id);
    }
    let summary = summarize(&cases)?;
    let dir = report_dir(out)?;
    write_reports(out, &summary, &cases)?;
    let manifest_inputs = BTreeMap::from([("cases", show(inputs)), ("out", out.display().to_string())]);
    write_manifest(&dir, "report", cfg, manifest_inputs)?;
    print_summary(&summary);
    Ok(())
}
