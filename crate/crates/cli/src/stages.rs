use std::path::{Path, PathBuf};

use caustic_cs::classifier::{self, Example};
use caustic_cs::config::{PipelineConfig, Solver};
use caustic_cs::cs::{
    acquire, ista_reconstruct, omp_reconstruct, relative_error, IstaParams, MaskStack, MeasurementSeries, OmpParams,
    SparseBasis,
};
use caustic_cs::eval;
use caustic_cs::io::{self, ArrayFile, Sidecar};
use caustic_cs::pipeline::{self, Sample};
use caustic_cs::report;
use caustic_cs::target::{rasterize_letter, TargetLabel};
use caustic_cs::{Error, Result};
use ndarray::{Array1, Array2, Array3, Axis};

use crate::Common;

const MASKS: &str = "masks.ccs";
const MEASUREMENTS: &str = "measurements.ccs";
const LABELS: &str = "labels.csv";
const SCALOGRAMS: &str = "scalograms.ccs";
const MODEL: &str = "model.ccs";
const CONFUSION_AVG: &str = "confusion_avg.csv";
const PREVIEW_MASKS: usize = 4;

fn label_names() -> Vec<&'static str> {
    TargetLabel::ALL.iter().map(|l| l.as_str()).collect()
}

pub struct Context {
    cfg: PipelineConfig,
    hash: String,
    out: PathBuf,
}

impl Context {
    pub fn new(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.set_seed(seed);
        }
        if let Some(frames) = common.frames {
            cfg.acquisition.frames = frames;
        }
        if common.debug_flat_surface {
            cfg.acquisition.flat_surface = true;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn sidecar(&self, stage: &str) -> Sidecar {
        Sidecar::new(stage, self.cfg.seed, &self.hash)
    }

    /// Sidecar of an upstream artifact after checking it belongs to this config.
    fn upstream(&self, name: &str) -> Result<(Sidecar, (String, String))> {
        let p = self.path(name);
        let side = Sidecar::read_for(&p)?;
        side.require_hash(&self.hash)?;
        let h = io::file_hash(&io::sidecar_path(&p))?;
        Ok((side, (name.to_string(), h)))
    }

    fn load_array(&self, name: &str) -> Result<(ArrayFile, (String, String))> {
        let (side, input) = self.upstream(name)?;
        let a = ArrayFile::read(&self.path(name))?;
        if a.dims != side.dims {
            return Err(Error::Data(format!(
                "{name}: dims {:?} disagree with its sidecar {:?}",
                a.dims, side.dims
            )));
        }
        Ok((a, input))
    }

    fn write_array(&self, name: &str, a: &ArrayFile, mut side: Sidecar) -> Result<()> {
        let p = self.path(name);
        a.write(&p)?;
        side.dims = a.dims.clone();
        side.write_for(&p)?;
        println!("wrote {} {:?}", p.display(), a.dims);
        Ok(())
    }

    fn load_masks(&self) -> Result<(MaskStack, (String, String))> {
        let (a, input) = self.load_array(MASKS)?;
        let m = a.to_array2()?;
        let acq = &self.cfg.acquisition;
        let times = (0..m.nrows()).map(|i| acq.frame_time(i)).collect();
        let shape = (self.cfg.optics.mask_nx, self.cfg.optics.mask_ny);
        Ok((MaskStack::new(m, times, shape)?, input))
    }

    pub fn simulate_masks(&self) -> Result<()> {
        let c = &self.cfg;
        let stack = pipeline::simulate_masks(&c.ripple, &c.optics, &c.acquisition)?;
        let cfg_path = self.path("config.json");
        std::fs::write(&cfg_path, c.to_json() + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        let mut side = self.sidecar("simulate-masks");
        side.extra = serde_json::json!({
            "mask_shape": [c.optics.mask_nx, c.optics.mask_ny],
            "frame_times": stack.frame_times(),
            "flat_surface": c.acquisition.flat_surface,
            "mutual_coherence": stack.mutual_coherence().ok(),
        });
        self.write_array(MASKS, &ArrayFile::from_array(stack.masks()), side)?;
        for (i, row) in stack.masks().outer_iter().take(PREVIEW_MASKS).enumerate() {
            let img = row.to_owned().into_shape(stack.mask_shape()).expect("row is one mask");
            let max = img.iter().cloned().fold(0.0, f64::max);
            io::write_gray_png(&self.path(&format!("mask_{i:04}.png")), &img, max)?;
        }
        Ok(())
    }

    fn target_transmission(&self, name: &str, size: usize) -> Result<Array2<f64>> {
        match name {
            "opaque" => Ok(Array2::zeros((size, size))),
            "clear" => Ok(Array2::ones((size, size))),
            other => {
                let label: TargetLabel = other.parse()?;
                Ok(rasterize_letter(label, size, self.cfg.dataset.stroke_width)?.transmission)
            }
        }
    }

    pub fn acquire_single(&self, target: &str, noise_sigma: f64) -> Result<()> {
        let (stack, input) = self.load_masks()?;
        let x = self.target_transmission(target, stack.mask_shape().0)?;
        let series = acquire(&stack, &x, noise_sigma, self.cfg.seed)?;
        let p = self.path(&format!("series_{target}.csv"));
        io::write_series_csv(&p, &series.y)?;
        let mut side = self.sidecar("acquire");
        side.inputs.push(input);
        side.dims = vec![series.len()];
        side.extra = serde_json::json!({ "target": target, "noise_sigma": noise_sigma });
        side.write_for(&p)?;
        println!("wrote {} ({} samples)", p.display(), series.len());
        Ok(())
    }

    pub fn acquire_dataset(&self) -> Result<()> {
        let (stack, input) = self.load_masks()?;
        let c = &self.cfg;
        let samples = pipeline::build_dataset(&stack, &c.dataset, &c.acquisition, c.seed)?;
        let m = stack.frames();
        let mut y = Array2::zeros((samples.len(), m));
        for (mut row, s) in y.outer_iter_mut().zip(&samples) {
            row.assign(&Array1::from(s.series.y.clone()));
        }
        let mut side = self.sidecar("acquire");
        side.inputs.push(input);
        self.write_array(MEASUREMENTS, &ArrayFile::from_array(&y), side.clone())?;
        let rows: Vec<Vec<String>> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    i.to_string(),
                    s.label.to_string(),
                    s.instance.to_string(),
                    format!("{}", s.series.noise_sigma),
                ]
            })
            .collect();
        let lp = self.path(LABELS);
        io::write_csv(&lp, &["index", "label", "instance", "noise_sigma"], &rows)?;
        side.dims = vec![samples.len()];
        side.write_for(&lp)?;
        for label in TargetLabel::ALL {
            if let Some(s) = samples.iter().find(|s| s.label == label) {
                io::write_gray_png(&self.path(&format!("target_{label}.png")), &s.target.transmission, 1.0)?;
            }
        }
        Ok(())
    }

    fn load_dataset(&self) -> Result<(Vec<Sample>, Vec<(String, String)>)> {
        let (a, input) = self.load_array(MEASUREMENTS)?;
        let (_, label_input) = self.upstream(LABELS)?;
        let y = a.to_array2()?;
        let (_, rows) = io::read_csv(&self.path(LABELS))?;
        if rows.len() != y.nrows() {
            return Err(Error::Data(format!(
                "{LABELS} has {} rows, measurements have {}",
                rows.len(),
                y.nrows()
            )));
        }
        let size = self.cfg.optics.mask_nx;
        let samples = rows
            .iter()
            .zip(y.outer_iter())
            .map(|(r, series)| {
                let bad = || Error::Data(format!("{LABELS}: malformed row {r:?}"));
                let label: TargetLabel = r.get(1).ok_or_else(bad)?.parse()?;
                Ok(Sample {
                    label,
                    instance: r.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?,
                    target: rasterize_letter(label, size, self.cfg.dataset.stroke_width)?,
                    series: MeasurementSeries {
                        y: series.to_vec(),
                        noise_sigma: r.get(3).ok_or_else(bad)?.parse().map_err(|_| bad())?,
                        rng_seed: self.cfg.seed,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((samples, vec![input, label_input]))
    }

    pub fn reconstruct(&self, target: &str) -> Result<()> {
        let (stack, input) = self.load_masks()?;
        let (rows, cols) = stack.mask_shape();
        let x = self.target_transmission(target, rows)?;
        let y = acquire(&stack, &x, 0.0, 0)?;
        let rc = &self.cfg.reconstruction;
        let basis = SparseBasis::new(rc.basis, rows, cols);
        let res = match rc.solver {
            Solver::Omp => omp_reconstruct(
                &y,
                &stack,
                &basis,
                &OmpParams {
                    k_max: rc.k_max.min(stack.frames()),
                    tol: rc.tol,
                    seed_dc: rc.seed_dc,
                },
            )?,
            Solver::Ista => ista_reconstruct(
                &y,
                &stack,
                &basis,
                &IstaParams {
                    lambda: rc.lambda,
                    max_iters: rc.max_iters,
                    ..IstaParams::new(rc.lambda)
                },
            )?,
        };
        let truth = Array1::from_iter(x.iter().copied());
        let err = relative_error(res.x_hat.view(), truth.view());
        let img = res.image((rows, cols))?;
        let mut side = self.sidecar("reconstruct");
        side.inputs.push(input);
        side.extra = serde_json::json!({
            "target": target,
            "solver": rc.solver,
            "relative_error": err,
            "residual_norm": res.residual_norm,
            "iterations": res.iterations,
            "stop_reason": format!("{:?}", res.stop_reason),
        });
        let name = format!("reconstruction_{target}.ccs");
        self.write_array(&name, &ArrayFile::from_array(&img), side)?;
        io::write_gray_png(&self.path(&format!("reconstruction_{target}.png")), &img, 1.0)?;
        println!("relative error {err:.4} after {} iterations", res.iterations);
        Ok(())
    }

    pub fn cwt(&self) -> Result<()> {
        let (samples, inputs) = self.load_dataset()?;
        let f = &self.cfg.features;
        let s = f.image_size;
        let images: Vec<Array3<f64>> = samples
            .iter()
            .map(|smp| pipeline::scalogram_image(&smp.series, f).map(|i| i.pixels))
            .collect::<Result<_>>()?;
        let mut all = ndarray::Array4::zeros((images.len(), s, s, 3));
        for (mut dst, img) in all.outer_iter_mut().zip(&images) {
            dst.assign(img);
        }
        let mut side = self.sidecar("cwt");
        side.inputs = inputs;
        self.write_array(SCALOGRAMS, &ArrayFile::from_array(&all), side)?;
        for label in TargetLabel::ALL {
            if let Some(i) = samples.iter().position(|x| x.label == label) {
                io::write_rgb_png(&self.path(&format!("scalogram_{label}.png")), &images[i])?;
            }
        }
        Ok(())
    }

    fn load_examples(&self) -> Result<(Vec<Example>, Vec<(String, String)>)> {
        let (a, input) = self.load_array(SCALOGRAMS)?;
        let (_, label_input) = self.upstream(LABELS)?;
        let (_, rows) = io::read_csv(&self.path(LABELS))?;
        let arr = a.to_array();
        let s = self.cfg.features.image_size;
        if arr.shape() != [rows.len(), s, s, 3] {
            return Err(Error::Data(format!(
                "{SCALOGRAMS} has shape {:?}, expected [{}, {s}, {s}, 3]",
                arr.shape(),
                rows.len()
            )));
        }
        let examples = arr
            .axis_iter(Axis(0))
            .zip(&rows)
            .map(|(img, r)| {
                let label: TargetLabel = r
                    .get(1)
                    .ok_or_else(|| Error::Data(format!("{LABELS}: malformed row {r:?}")))?
                    .parse()?;
                let px = img.into_dimensionality::<ndarray::Ix3>().expect("4-D input").to_owned();
                Ok(Example {
                    input: classifier::to_chw(&px),
                    label: label.index(),
                })
            })
            .collect::<Result<_>>()?;
        Ok((examples, vec![input, label_input]))
    }

    pub fn train(&self) -> Result<()> {
        let (examples, inputs) = self.load_examples()?;
        let out = classifier::train(&examples, self.cfg.cnn, &self.cfg.train)?;
        let acc = classifier::accuracy(&out.params, &examples)?;
        let mut side = self.sidecar("train");
        side.inputs = inputs;
        let blocks: Vec<_> = out
            .params
            .blocks()
            .iter()
            .map(|(n, s, e)| serde_json::json!({ "name": n, "start": s, "end": e }))
            .collect();
        side.extra = serde_json::json!({
            "architecture": self.cfg.cnn,
            "blocks": blocks,
            "train_accuracy": acc,
        });
        self.write_array(MODEL, &ArrayFile::new(vec![out.params.data.len()], out.params.data.clone())?, side)?;
        let rows: Vec<Vec<String>> = out
            .history
            .iter()
            .map(|h| vec![h.epoch.to_string(), format!("{}", h.loss), format!("{}", h.accuracy)])
            .collect();
        io::write_csv(&self.path("history.csv"), &["epoch", "loss", "accuracy"], &rows)?;
        let losses: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
        report::render_line_chart(&[losses], 320, 200).save(self.path("loss.png"))?;
        println!("training accuracy {acc:.4}");
        Ok(())
    }

    pub fn evaluate(&self) -> Result<()> {
        let (examples, inputs) = self.load_examples()?;
        let c = &self.cfg;
        let rep = eval::run_cv(&examples, c.cnn, &c.train, c.evaluation.folds, c.seed)?;
        let names = label_names();
        let mut fold_inputs = inputs.clone();
        for f in &rep.folds {
            let name = format!("confusion_fold{}.csv", f.fold);
            let p = self.path(&name);
            io::write_matrix_csv(&p, &names, &f.confusion.as_f64())?;
            let mut side = self.sidecar("evaluate");
            side.inputs = inputs.clone();
            side.dims = vec![5, 5];
            side.extra = serde_json::json!({ "fold": f.fold, "metrics": f.metrics });
            side.write_for(&p)?;
            fold_inputs.push((name.clone(), io::file_hash(&io::sidecar_path(&p))?));
        }
        let p = self.path(CONFUSION_AVG);
        io::write_matrix_csv(&p, &names, &rep.averaged.mean)?;
        let mut side = self.sidecar("evaluate");
        side.inputs = fold_inputs;
        side.dims = vec![5, 5];
        side.extra = serde_json::json!({
            "folds": c.evaluation.folds,
            "metrics": rep.metrics,
            "fold_assignment": rep.assignment.folds,
        });
        side.write_for(&p)?;
        let rows: Vec<Vec<String>> = rep
            .folds
            .iter()
            .flat_map(|f| {
                f.history.iter().map(move |h| {
                    vec![f.fold.to_string(), h.epoch.to_string(), format!("{}", h.loss), format!("{}", h.accuracy)]
                })
            })
            .collect();
        io::write_csv(&self.path("cv_history.csv"), &["fold", "epoch", "loss", "accuracy"], &rows)?;
        println!(
            "overall accuracy {:.4}, macro recall {:.4}",
            rep.metrics.overall_accuracy, rep.metrics.macro_recall
        );
        Ok(())
    }

    pub fn report(&self, confusion: Option<&Path>) -> Result<()> {
        let path = confusion.map(Path::to_path_buf).unwrap_or_else(|| self.path(CONFUSION_AVG));
        let side_path = io::sidecar_path(&path);
        let mut side = self.sidecar("report");
        if side_path.exists() {
            let upstream = Sidecar::read_for(&path)?;
            upstream.require_hash(&self.hash)?;
            side.inputs.push((
                path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                io::file_hash(&side_path)?,
            ));
        } else if confusion.is_none() {
            return Err(Error::Data(format!("{} has no provenance sidecar", path.display())));
        }
        let (labels, m) = io::read_matrix_csv(&path)?;
        let names: Vec<&str> = labels.iter().map(String::as_str).collect();
        let metrics = eval::metrics(&m)?;
        report::render_heatmap(&m, 40).save(self.path("confusion_heatmap.png"))?;
        let mp = self.path("metrics.csv");
        report::write_metrics_csv(&mp, &names, &metrics)?;
        side.dims = vec![names.len(), 5];
        side.write_for(&mp)?;
        let mut md = String::from("# Performance metrics per label\n\n");
        md.push_str(&report::markdown_table(&names, &metrics));
        md.push_str("\nAveraged confusion matrix (rows actual, columns predicted):\n\n");
        md.push_str(&format!("| | {} |\n|---|{}\n", names.join(" | "), "---|".repeat(names.len())));
        for (l, row) in names.iter().zip(m.outer_iter()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.1}")).collect();
            md.push_str(&format!("| {l} | {} |\n", cells.join(" | ")));
        }
        let sp = self.path("summary.md");
        std::fs::write(&sp, md).map_err(|e| Error::io(&sp, e))?;
        println!("wrote {}", sp.display());
        Ok(())
    }

    pub fn run_all(&self) -> Result<()> {
        self.simulate_masks()?;
        self.acquire_dataset()?;
        self.cwt()?;
        self.evaluate()?;
        self.report(None)
    }
}
