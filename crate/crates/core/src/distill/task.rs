//! Synthetic hot-region task for exercising distillation end to end.
//!
//! Images are dark noise with one bright square. A random teacher stack gets
//! two planted pieces:
//!
//! * a feed-forward unit in an early layer that fires on bright cells and
//!   writes a fresh direction `e_hot` into the residual stream;
//! * a rank-one query/key pair in the last layer's first head, so the last
//!   text token attends to tokens carrying `e_hot`.
//!
//! The student copies a sparse subset of teacher layers that skips the
//! detector layer, so before training its last-layer attention does not
//! find the square; distillation has to rebuild that ability.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{LayerPairPlan, LossWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::localization_hit;
use crate::prune::encoder::{EncoderConfig, TileEncoder};
use crate::prune::{run, LayoutConfig, LevelLayout, PruneConfig, RfmProvider};
use crate::pyramid::{ImagePyramid, PyramidConfig, Rect};
use crate::raster::RasterImage;
use crate::toyattn::{init_student_from_teacher, rms_norm, DecoderStack, StackConfig, TokenSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub seed: u64,
    pub image_side: usize,
    pub square_min: usize,
    pub square_max: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub stack: StackConfig,
    /// 1-based teacher layer holding the planted detector.
    pub detector_layer: usize,
    /// Logit advantage of an average hot token in the planted head.
    pub logit_gap: f64,
    /// Query scale of the unplanted heads of the last layer.
    pub quiet_heads: f64,
    pub student: LayerPairPlan,
    pub weights: LossWeights,
    pub steps: usize,
    pub lr: f64,
    pub alpha: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            image_side: 64,
            square_min: 12,
            square_max: 20,
            train_images: 16,
            test_images: 40,
            stack: StackConfig {
                max_seq: 512,
                ..StackConfig::default()
            },
            detector_layer: 2,
            logit_gap: 6.0,
            quiet_heads: 0.0,
            student: LayerPairPlan::first_and_last(vec![1, 4, 8]),
            weights: LossWeights::default(),
            steps: 500,
            lr: 0.05,
            alpha: 0.25,
        }
    }
}

impl TaskConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            plan: self.student.clone(),
            weights: self.weights,
            steps: self.steps,
            lr: self.lr,
            seed: self.seed,
            batch_size: None,
        }
    }

    fn pyramid_config(&self) -> PyramidConfig {
        let half = self.image_side / 2;
        PyramidConfig {
            tile_size: half,
            min_side: self.image_side,
            thumbnail_size: half,
        }
    }

    fn layout(&self) -> LayoutConfig {
        LayoutConfig {
            tokens_per_tile_side: 4,
            thumbnail_side: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedImage {
    pub image: RasterImage,
    pub square: Rect,
}

fn planted_image(cfg: &TaskConfig, rng: &mut ChaCha8Rng) -> Result<PlantedImage> {
    let n = cfg.image_side;
    let side = rng.random_range(cfg.square_min..=cfg.square_max);
    let x0 = rng.random_range(0..=n - side);
    let y0 = rng.random_range(0..=n - side);
    let image = RasterImage::from_fn(n, n, 1, |x, y, _| {
        if (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y) {
            rng.random_range(200..=255)
        } else {
            rng.random_range(0..=90)
        }
    })?;
    Ok(PlantedImage {
        image,
        square: Rect::new(x0 as f64, y0 as f64, (x0 + side) as f64, (y0 + side) as f64),
    })
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub encoder: TileEncoder,
    pub teacher: DecoderStack,
    pub train: Vec<PlantedImage>,
    pub test: Vec<PlantedImage>,
}

struct Encoded {
    seq: TokenSequence,
    /// Absolute positions of hr tokens whose cell is mostly inside the square.
    hot: Vec<usize>,
    /// Absolute positions of the other scored hr tokens.
    cold: Vec<usize>,
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn mean_rows(m: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::zeros(m.ncols());
    for &r in rows {
        acc += &m.row(r);
    }
    acc / rows.len().max(1) as f64
}

impl SyntheticTask {
    pub fn build(config: TaskConfig) -> Result<Self> {
        config.stack.validate()?;
        config.student.validate(config.stack.layers)?;
        let m = config.stack.layers;
        if config.detector_layer == 0 || config.detector_layer >= m {
            return Err(Error::invalid("detector layer must precede the last teacher layer"));
        }
        if config.student.teacher_indices.contains(&config.detector_layer)
            || *config.student.teacher_indices.last().expect("validated") != m
        {
            return Err(Error::invalid(
                "the student must end at the last teacher layer and skip the detector layer",
            ));
        }
        if config.square_min == 0 || config.square_min > config.square_max || config.square_max > config.image_side {
            return Err(Error::invalid("square sizes must satisfy 0 < min <= max <= image side"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let train = (0..config.train_images)
            .map(|_| planted_image(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let test = (0..config.test_images)
            .map(|_| planted_image(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder = TileEncoder::new(EncoderConfig {
            dim: config.stack.model_dim,
            seed: config.seed ^ 0x5eed,
            ..EncoderConfig::default()
        })?;
        let teacher = DecoderStack::random(config.stack)?;
        let mut task = Self {
            config,
            encoder,
            teacher,
            train,
            test,
        };
        task.plant(&mut rng)?;
        Ok(task)
    }

    fn encode(&self, img: &PlantedImage) -> Result<Encoded> {
        let pyr = ImagePyramid::build(&img.image, &self.config.pyramid_config())?;
        let layout = LevelLayout::full(&pyr.geometry, 1, self.config.layout())?;
        let seq = self.encoder.sequence(&pyr, &layout)?;
        let base = seq.segments.sys + seq.segments.lr;
        let (mut hot, mut cold) = (Vec::new(), Vec::new());
        for i in 0..layout.n_scored() {
            let cell = layout.footprint(&pyr.geometry, i);
            let pos = base + layout.scored[i];
            if cell.intersect(&img.square).area() > 0.5 * cell.area() {
                hot.push(pos);
            } else {
                cold.push(pos);
            }
        }
        Ok(Encoded { seq, hot, cold })
    }

    pub fn sequence(&self, img: &PlantedImage) -> Result<TokenSequence> {
        Ok(self.encode(img)?.seq)
    }

    pub fn train_sequences(&self) -> Result<Vec<TokenSequence>> {
        self.train.iter().map(|i| self.sequence(i)).collect()
    }

    /// Inputs of layer `layer` (1-based) of `stack` over the training set.
    fn layer_inputs(stack: &DecoderStack, layer: usize, data: &[Encoded]) -> Result<Vec<Array2<f64>>> {
        data.iter().map(|e| Ok(stack.forward_layers(&e.seq, layer - 1)?.0)).collect()
    }

    fn plant(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let cfg = self.config.clone();
        let d = cfg.stack.model_dim;
        let data = self.train.iter().map(|i| self.encode(i)).collect::<Result<Vec<_>>>()?;
        let hot_all: usize = data.iter().map(|e| e.hot.len()).sum();
        if hot_all == 0 {
            return Err(Error::invalid("training squares cover no token cell"));
        }

        // per-image hot-minus-cold directions the untrained student sees at
        // its last layer; e_hot is drawn orthogonal to all of them and to the
        // brightness direction
        let student = init_student_from_teacher(&self.teacher, &cfg.student.teacher_indices)?;
        let r = student.layers.len();
        let mut avoid = vec![self.encoder.brightness_direction()];
        for (x, e) in Self::layer_inputs(&student, r, &data)?.iter().zip(&data) {
            let (_, u) = rms_norm(x, &student.layers[r - 1].norm1);
            avoid.push(mean_rows(&u, &e.hot) - mean_rows(&u, &e.cold));
        }
        let mut basis: Vec<Array1<f64>> = Vec::new();
        for mut v in avoid {
            for b in &basis {
                let c = v.dot(b);
                v.scaled_add(-c, b);
            }
            if v.dot(&v) > 1e-18 {
                basis.push(unit(v));
            }
        }
        if basis.len() >= d {
            return Err(Error::invalid("too many training images to find a fresh direction"));
        }
        let mut e_hot = Array1::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0));
        for b in &basis {
            let c = e_hot.dot(b);
            e_hot.scaled_add(-c, b);
        }
        let e_hot = unit(e_hot);

        // detector unit: reads the normalised stream along a brightness
        // readout, fires above the midpoint of hot and cold means
        let det = cfg.detector_layer;
        let probe = DecoderStack {
            config: StackConfig {
                layers: det,
                ..cfg.stack
            },
            layers: self.teacher.layers[..det].to_vec(),
        };
        let mut readout_acc = Array1::<f64>::zeros(d);
        let mut zs = Vec::with_capacity(data.len());
        for e in &data {
            let cache = probe.forward_cached(&e.seq)?;
            let z = cache.layers[det - 1].z.clone();
            readout_acc += &(mean_rows(&z, &e.hot) - mean_rows(&z, &e.cold));
            zs.push(z);
        }
        let readout = unit(readout_acc);
        let (mut hot_sum, mut cold_sum, mut cold_n) = (0.0, 0.0, 0usize);
        for (z, e) in zs.iter().zip(&data) {
            hot_sum += e.hot.iter().map(|&i| z.row(i).dot(&readout)).sum::<f64>();
            cold_sum += e.cold.iter().map(|&i| z.row(i).dot(&readout)).sum::<f64>();
            cold_n += e.cold.len();
        }
        let hot_mean = hot_sum / hot_all as f64;
        let cold_mean = cold_sum / cold_n.max(1) as f64;
        let threshold = 0.5 * (hot_mean + cold_mean);
        let gain = 4.0 / (hot_mean - threshold).max(1e-6);
        {
            let w = &mut self.teacher.layers[det - 1];
            w.w1.column_mut(0).assign(&(&readout * gain));
            w.b1[0] = -gain * threshold;
            w.w2.row_mut(0).assign(&e_hot);
        }

        // planted head: rank-one query on the last text token, key on e_hot
        let heads = cfg.stack.heads;
        let dh = cfg.stack.head_dim();
        let inputs = Self::layer_inputs(&self.teacher, cfg.stack.layers, &data)?;
        let last = self.teacher.layers.len() - 1;
        let mut query_dir = Array1::<f64>::zeros(d);
        let (mut hot_k, mut cold_k, mut q_norm) = (0.0, 0.0, 0.0);
        for (x, e) in inputs.iter().zip(&data) {
            let (_, u) = rms_norm(x, &self.teacher.layers[last].norm1);
            let t = *e.seq.turn_ends.last().expect("one turn");
            query_dir += &u.row(t);
            hot_k += e.hot.iter().map(|&i| u.row(i).dot(&e_hot)).sum::<f64>();
            cold_k += e.cold.iter().map(|&i| u.row(i).dot(&e_hot)).sum::<f64>();
        }
        let query_dir = unit(query_dir);
        for (x, e) in inputs.iter().zip(&data) {
            let (_, u) = rms_norm(x, &self.teacher.layers[last].norm1);
            q_norm += u.row(*e.seq.turn_ends.last().expect("one turn")).dot(&query_dir);
        }
        q_norm /= data.len() as f64;
        let key_gap = hot_k / hot_all as f64 - cold_k / cold_n.max(1) as f64;
        // logit = (u_t . q_dir) g (u_j . e_hot) g / sqrt(dh)
        let g = (cfg.logit_gap * (dh as f64).sqrt() / (q_norm * key_gap).abs().max(1e-9)).sqrt();
        let sign = if key_gap < 0.0 { -1.0 } else { 1.0 };
        let w = &mut self.teacher.layers[last];
        w.wq.slice_mut(s![.., 0..dh]).fill(0.0);
        w.wk.slice_mut(s![.., 0..dh]).fill(0.0);
        w.wq.slice_mut(s![.., 0]).assign(&(&query_dir * g));
        w.wk.slice_mut(s![.., 0]).assign(&(&e_hot * (g * sign)));
        w.wq.slice_mut(s![.., dh..heads * dh]).mapv_inplace(|v| v * cfg.quiet_heads);
        Ok(())
    }

    /// Fraction of `images` whose planted square is more than half covered
    /// by the top-alpha hr tokens of `stack`'s head-averaged last layer.
    pub fn recall(&self, stack: &DecoderStack, images: &[PlantedImage]) -> Result<f64> {
        let prune = PruneConfig {
            alpha: self.config.alpha,
            n_max: usize::MAX,
            ..PruneConfig::default()
        };
        let mut hits = 0;
        for img in images {
            let pyramid = ImagePyramid::build(&img.image, &self.config.pyramid_config())?;
            let mut provider = RfmProvider {
                stack,
                encoder: &self.encoder,
                pyramid: &pyramid,
            };
            let trace = run(&pyramid.geometry, &mut provider, self.config.layout(), &prune)?;
            let fps: Vec<Rect> = trace
                .retained
                .iter()
                .map(|t| Rect::new(t.footprint[0], t.footprint[1], t.footprint[2], t.footprint[3]))
                .collect();
            let side = self.config.image_side as f64;
            if localization_hit(&fps, &img.square, side, side)? {
                hits += 1;
            }
        }
        Ok(hits as f64 / images.len().max(1) as f64)
    }

    /// Share of planted-head attention mass on hot tokens, averaged over the
    /// training images (a calibration diagnostic).
    pub fn teacher_hot_mass(&self) -> Result<f64> {
        let mut total = 0.0;
        for img in &self.train {
            let e = self.encode(img)?;
            let (_, rec) = self.teacher.forward(&e.seq)?;
            let row = rec.rows(self.teacher.layers.len(), 0).row(0).to_owned();
            let vis0 = e.seq.segments.sys;
            let hot: f64 = e.hot.iter().map(|&i| row[i - vis0]).sum();
            total += hot / row.sum();
        }
        Ok(total / self.train.len().max(1) as f64)
    }
}
