use std::thread;
use std::time::{Duration, Instant};

use super::ring::{AbortOnPanic, RingStats, TileData, TileRing};
use crate::codec::BitmapSparseMatrix;
use crate::error::{Result, SalrError};
use crate::fusion::{apply_fused, FusedAdapters};
use crate::linalg::{axpy, sample_gaussian_matrix, DenseMatrix, RngState};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Weight rows (input features) per tile.
    pub tile_rows: usize,
    /// Byte blocks (8 output columns each) per tile.
    pub tile_col_bytes: usize,
    /// Tiles the ring holds at once.
    pub ring_capacity: usize,
    /// Run decode and multiply concurrently; `false` decodes and multiplies
    /// each tile in turn on the calling thread.
    pub overlap: bool,
    /// Longest either role may wait on a slot before the run is abandoned.
    pub wait_timeout: Duration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tile_rows: 64,
            tile_col_bytes: 8,
            ring_capacity: 4,
            overlap: true,
            wait_timeout: Duration::from_secs(60),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_rows == 0 || self.tile_col_bytes == 0 {
            return Err(SalrError::Config("tile dimensions must be positive".into()));
        }
        if self.overlap && self.ring_capacity < 2 {
            return Err(SalrError::Config(format!(
                "ring capacity {} too small for overlapped mode (need >= 2)",
                self.ring_capacity
            )));
        }
        Ok(())
    }
}

/// Callbacks fired around each tile; used to inject delays in tests.
pub trait PipelineHooks: Sync {
    fn before_decode(&self, _tile: usize) {}
    fn before_compute(&self, _tile: usize) {}
}

pub struct NoHooks;

impl PipelineHooks for NoHooks {}

struct TilePlan {
    rows: usize,
    bytes_per_row: usize,
    tile_rows: usize,
    tile_col_bytes: usize,
    col_tiles: usize,
    count: usize,
}

impl TilePlan {
    fn new(s: &BitmapSparseMatrix, cfg: &PipelineConfig) -> Self {
        let rows = s.rows();
        let bpr = s.bytes_per_row();
        let row_tiles = rows.div_ceil(cfg.tile_rows);
        let col_tiles = bpr.div_ceil(cfg.tile_col_bytes);
        Self {
            rows,
            bytes_per_row: bpr,
            tile_rows: cfg.tile_rows,
            tile_col_bytes: cfg.tile_col_bytes,
            col_tiles,
            count: row_tiles * col_tiles,
        }
    }

    /// Tiles run row-tile-major, so every output cell sees its input rows
    /// in ascending order.
    fn decode(&self, s: &BitmapSparseMatrix, seq: usize, tile: &mut TileData) -> Result<()> {
        let (rt, ct) = (seq / self.col_tiles, seq % self.col_tiles);
        let r0 = rt * self.tile_rows;
        let b0 = ct * self.tile_col_bytes;
        let r1 = (r0 + self.tile_rows).min(self.rows);
        let b1 = (b0 + self.tile_col_bytes).min(self.bytes_per_row);
        let (h, w) = s.decode_tile_into(r0..r1, b0..b1, &mut tile.buf)?;
        tile.row0 = r0;
        tile.col0 = b0 * 8;
        tile.rows = h;
        tile.cols = w;
        Ok(())
    }
}

fn accumulate(x: &DenseMatrix, tile: &TileData, y: &mut [f64], out_cols: usize) {
    if tile.cols == 0 {
        return;
    }
    for n in 0..x.rows() {
        let xr = &x.row(n)[tile.row0..tile.row0 + tile.rows];
        let yr = &mut y[n * out_cols + tile.col0..n * out_cols + tile.col0 + tile.cols];
        for (t, &a) in xr.iter().enumerate() {
            axpy(yr, a, &tile.buf[t * tile.cols..(t + 1) * tile.cols]);
        }
    }
}

type SideJob<'a> = &'a (dyn Fn() -> Result<DenseMatrix> + Sync);

/// Runs the two-stage schedule. `side` is evaluated by the decoder role
/// right after the first tile is published (or up front when serial).
fn run(
    x: &DenseMatrix,
    s: &BitmapSparseMatrix,
    cfg: &PipelineConfig,
    hooks: &dyn PipelineHooks,
    side: Option<SideJob>,
) -> Result<(DenseMatrix, Option<DenseMatrix>, RingStats)> {
    cfg.validate()?;
    if x.cols() != s.rows() {
        return Err(SalrError::shape(
            "pipelined_matmul",
            format!("x is {}x{}, weight is {}x{}", x.rows(), x.cols(), s.rows(), s.cols()),
        ));
    }
    let plan = TilePlan::new(s, cfg);
    let out_cols = s.cols();
    let mut y = vec![0.0; x.rows() * out_cols];

    if !cfg.overlap {
        let side_out = side.map(|f| f()).transpose()?;
        let mut tile = TileData::default();
        for seq in 0..plan.count {
            hooks.before_decode(seq);
            plan.decode(s, seq, &mut tile)?;
            tile.id = seq;
            hooks.before_compute(seq);
            accumulate(x, &tile, &mut y, out_cols);
        }
        let n = plan.count as u64;
        let stats = RingStats { produced: n, consumed: n, violations: 0 };
        return Ok((DenseMatrix::new(x.rows(), out_cols, y)?, side_out, stats));
    }

    let ring = TileRing::new(cfg.ring_capacity, cfg.wait_timeout);
    let (decoded, computed) = thread::scope(|sc| {
        let decoder = sc.spawn(|| {
            let _guard = AbortOnPanic(&ring);
            let mut side_out = None;
            let run_side = |side_out: &mut Option<DenseMatrix>| -> Result<()> {
                if let Some(f) = side {
                    if side_out.is_none() {
                        *side_out = Some(f().inspect_err(|_| ring.abort())?);
                    }
                }
                Ok(())
            };
            for seq in 0..plan.count {
                hooks.before_decode(seq);
                ring.produce(seq, |tile| plan.decode(s, seq, tile)).inspect_err(|_| ring.abort())?;
                if seq == 0 {
                    run_side(&mut side_out)?;
                }
            }
            run_side(&mut side_out)?;
            Ok::<_, SalrError>(side_out)
        });
        let computed = {
            let _guard = AbortOnPanic(&ring);
            (0..plan.count).try_for_each(|seq| {
                hooks.before_compute(seq);
                ring.consume(seq, |tile| accumulate(x, tile, &mut y, out_cols)).inspect_err(|_| ring.abort())
            })
        };
        let decoded = decoder.join().unwrap_or_else(|_| Err(SalrError::Internal("decoder thread panicked".into())));
        (decoded, computed)
    });
    computed?;
    let side_out = decoded?;
    let stats = ring.stats();
    if stats.violations > 0 || stats.produced != stats.consumed {
        return Err(SalrError::Internal(format!("ring protocol violated: {stats:?}")));
    }
    Ok((DenseMatrix::new(x.rows(), out_cols, y)?, side_out, stats))
}

/// `x · decode(s)` through the decode/multiply pipeline. The result is
/// bit-identical to [`crate::linalg::matmul`] on the decoded weight for
/// every tiling and schedule.
pub fn pipelined_matmul(x: &DenseMatrix, s: &BitmapSparseMatrix, cfg: &PipelineConfig) -> Result<DenseMatrix> {
    run(x, s, cfg, &NoHooks, None).map(|(y, _, _)| y)
}

/// [`pipelined_matmul`] with callbacks, also returning the ring counters.
pub fn pipelined_matmul_with_hooks(
    x: &DenseMatrix,
    s: &BitmapSparseMatrix,
    cfg: &PipelineConfig,
    hooks: &dyn PipelineHooks,
) -> Result<(DenseMatrix, RingStats)> {
    run(x, s, cfg, hooks, None).map(|(y, _, st)| (y, st))
}

/// `x · decode(s) + (x · A_cat) · B_cat`, with the adapter product computed
/// by the decoder role while tiles are in flight.
pub fn pipelined_forward(
    x: &DenseMatrix,
    s: &BitmapSparseMatrix,
    fused: &FusedAdapters,
    cfg: &PipelineConfig,
) -> Result<DenseMatrix> {
    let job = || apply_fused(x, fused);
    let (y, delta, _) = run(x, s, cfg, &NoHooks, Some(&job))?;
    y.add(&delta.expect("side job always runs"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub batch: usize,
    pub tiles: usize,
    pub repeats: usize,
    /// Median seconds with `overlap = false`.
    pub serial_secs: f64,
    /// Median seconds with `overlap = true`.
    pub overlapped_secs: f64,
    pub speedup: f64,
}

impl BenchReport {
    pub fn to_key_value(&self) -> String {
        format!(
            "batch={}\ntiles={}\nrepeats={}\nserial_secs={:.6}\noverlapped_secs={:.6}\nspeedup={:.4}\n",
            self.batch, self.tiles, self.repeats, self.serial_secs, self.overlapped_secs, self.speedup
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times serial and overlapped runs on a seeded `batch × d_in` input after
/// checking that both produce the same output.
pub fn bench(
    batch: usize,
    s: &BitmapSparseMatrix,
    cfg: &PipelineConfig,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(SalrError::Domain(format!("repeats must be >= 3, got {repeats}")));
    }
    let x = sample_gaussian_matrix(&mut RngState::new(seed), batch, s.rows(), 1.0);
    let serial_cfg = PipelineConfig { overlap: false, ..cfg.clone() };
    let overlap_cfg = PipelineConfig { overlap: true, ..cfg.clone() };
    let a = pipelined_matmul(&x, s, &serial_cfg)?;
    let b = pipelined_matmul(&x, s, &overlap_cfg)?;
    if a != b {
        return Err(SalrError::Verification("serial and overlapped outputs differ".into()));
    }
    let time = |c: &PipelineConfig| -> Result<f64> {
        let mut samples = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            pipelined_matmul(&x, s, c)?;
            samples.push(t.elapsed().as_secs_f64());
        }
        Ok(median(samples))
    };
    let serial_secs = time(&serial_cfg)?;
    let overlapped_secs = time(&overlap_cfg)?;
    Ok(BenchReport {
        batch,
        tiles: TilePlan::new(s, cfg).count,
        repeats,
        serial_secs,
        overlapped_secs,
        speedup: serial_secs / overlapped_secs,
    })
}
