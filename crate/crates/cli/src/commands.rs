use std::fs;
use std::path::{Path, PathBuf};

use supportcal::analysis::{class_stats, format_comparison, write_aggregate, write_class_stats, write_runs};
use supportcal::experiment::{build_reference_map, run_experiment, simulate_reference_frames};
use supportcal::scene_sim::{read_correspondences, write_class_table, write_correspondences, write_scene_points};
use supportcal::support_map::{build_from_frames, SupportMap};
use supportcal::ExperimentConfig;

use crate::exit::CliError;
use crate::Common;

type Result<T> = std::result::Result<T, CliError>;

/// Files written by one invocation; removed again unless the command commits.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn prepare(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", dir.display())))?;
        if !dir.is_dir() {
            return Err(CliError::Io(format!("{} is not a directory", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            committed: false,
        })
    }

    fn write<E>(&mut self, name: &str, f: impl FnOnce(&Path) -> std::result::Result<(), E>) -> Result<PathBuf>
    where
        CliError: From<E>,
    {
        let path = self.dir.join(name);
        f(&path)?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("this subcommand requires --config <path>".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_maps(inputs: &[PathBuf]) -> Result<Vec<SupportMap>> {
    inputs
        .iter()
        .map(|p| SupportMap::load(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))))
        .collect()
}

fn save_map(out: &mut Outputs, map: &SupportMap, name: &str) -> Result<()> {
    let smap = out.write(&format!("{name}.smap"), |p| map.save(p))?;
    println!("wrote {}", smap.display());
    if map.is_normalized() {
        let png = out.write(&format!("{name}.png"), |p| map.export_grayscale(p))?;
        println!("wrote {}", png.display());
    }
    Ok(())
}

pub fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let frames = simulate_reference_frames(&cfg)?;
    let mut out = Outputs::prepare(&common.out)?;
    out.write("config.toml", |p| {
        supportcal::fsutil::write_atomic(p, cfg.to_toml().as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    })?;
    out.write("classes.toml", |p| write_class_table(p, &cfg.scene_spec().class_table()))?;
    for (t, frame) in frames.iter().enumerate() {
        out.write(&format!("scene_{t:03}.csv"), |p| write_scene_points(p, &frame.scene.points))?;
        out.write(&format!("corr_{t:03}.csv"), |p| write_correspondences(p, &frame.correspondences))?;
        println!(
            "frame {t:03}: {} points, {} visible correspondences",
            frame.scene.points.len(),
            frame.correspondences.len()
        );
    }
    out.commit();
    println!("simulated {} frames into {}", frames.len(), common.out.display());
    Ok(())
}

pub fn build_map(common: &Common, inputs: &[PathBuf], normalize: bool, name: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let frames = inputs
        .iter()
        .map(|p| read_correspondences(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut map = build_from_frames(&frames, cfg.camera.width, cfg.camera.height, cfg.support_map)?;
    if normalize {
        map.normalize()?;
    }
    let mut out = Outputs::prepare(&common.out)?;
    save_map(&mut out, &map, name)?;
    out.commit();
    let n: usize = frames.iter().map(Vec::len).sum();
    println!("accumulated {n} correspondences from {} files", frames.len());
    Ok(())
}

pub fn merge_maps(common: &Common, inputs: &[PathBuf], normalize: bool, name: &str) -> Result<()> {
    let maps = load_maps(inputs)?;
    let mut merged = maps[0].clone();
    for m in &maps[1..] {
        merged = merged.merge(m)?;
    }
    if normalize {
        merged.normalize()?;
    }
    let mut out = Outputs::prepare(&common.out)?;
    save_map(&mut out, &merged, name)?;
    out.commit();
    println!("merged {} maps", maps.len());
    Ok(())
}

pub fn analyze(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    let cfg = common.config.as_ref().map(|_| load_config(common)).transpose()?;
    let mut records = Vec::new();
    for p in inputs {
        records.extend(read_correspondences(p)?);
    }
    let stats = class_stats(&records)?;
    let mut out = Outputs::prepare(&common.out)?;
    out.write("class_stats.csv", |p| write_class_stats(p, &stats))?;
    out.commit();

    let name = |id: u32| {
        cfg.as_ref()
            .and_then(|c| c.classes.iter().find(|s| s.class.id == id))
            .map_or_else(|| id.to_string(), |s| s.class.name.clone())
    };
    println!("{:<12} {:>8} {:>12} {:>12} {:>12}  flag", "class", "count", "med |du|", "med |dv|", "med |f|");
    for s in &stats {
        println!(
            "{:<12} {:>8} {:>12.4} {:>12.4} {:>12.4}  {}",
            name(s.class_id),
            s.count,
            s.median_abs_du,
            s.median_abs_dv,
            s.summary,
            if s.above_average { "above average" } else { "below average" }
        );
    }
    Ok(())
}

pub fn refine(common: &Common, map_path: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let map = match map_path {
        Some(p) => {
            let map = SupportMap::load(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let d = map.params().downsample;
            let expected = (cfg.camera.width.div_ceil(d) as usize, cfg.camera.height.div_ceil(d) as usize);
            if (map.cells_x(), map.cells_y()) != expected {
                return Err(CliError::Usage(format!(
                    "map grid {}x{} does not match the configured camera ({}x{} cells expected)",
                    map.cells_x(),
                    map.cells_y(),
                    expected.0,
                    expected.1
                )));
            }
            if !map.is_normalized() {
                return Err(CliError::Usage(format!("{} is not normalized; merge or rebuild it first", p.display())));
            }
            map
        }
        None => build_reference_map(&cfg)?,
    };
    let report = run_experiment(&cfg, &map)?;
    let cmp = &report.comparison;
    let mut out = Outputs::prepare(&common.out)?;
    out.write("runs.csv", |p| write_runs(p, cmp, "uniform", "sgis"))?;
    out.write("aggregate.csv", |p| write_aggregate(p, cmp, "uniform", "sgis"))?;
    out.commit();
    print!("{}", format_comparison(cmp, "uniform", "sgis"));
    Ok(())
}
