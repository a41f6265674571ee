//! Sparse ratings: parsing, writing, seeded splits, and synthetic instances.
//!
//! External user/item IDs are remapped to dense 0-based indices by rank in
//! sorted ID order. That choice makes the mapping independent of line order,
//! so writing a structure back out and re-parsing it reproduces it exactly.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate entry for user {user}, item {item}")]
    DuplicateLine { line: usize, user: u64, item: u64 },
    #[error("duplicate entry for user {user}, item {item}")]
    Duplicate { user: u64, item: u64 },
    #[error("no entries")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("split leaves an empty {side} side (entries = {n}, fraction = {fraction})")]
    DegenerateSplit { side: &'static str, n: usize, fraction: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triplet file flavors. All three carry `user <sep> item <sep> rating` with
/// an optional trailing timestamp field that is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `user::item::rating[::timestamp]`
    DoubleColon,
    /// `user,item,rating[,timestamp]`
    Comma,
    /// whitespace-separated fields
    Whitespace,
}

impl RatingsFormat {
    pub fn name(self) -> &'static str {
        match self {
            RatingsFormat::DoubleColon => "mlcolon",
            RatingsFormat::Comma => "csv",
            RatingsFormat::Whitespace => "ws",
        }
    }

    fn write_separator(self) -> &'static str {
        match self {
            RatingsFormat::DoubleColon => "::",
            RatingsFormat::Comma => ",",
            RatingsFormat::Whitespace => " ",
        }
    }

    /// Conventional file extension for split outputs.
    pub fn extension(self) -> &'static str {
        match self {
            RatingsFormat::DoubleColon => "dat",
            RatingsFormat::Comma => "csv",
            RatingsFormat::Whitespace => "txt",
        }
    }
}

impl std::fmt::Display for RatingsFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RatingsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlcolon" => Ok(RatingsFormat::DoubleColon),
            "csv" => Ok(RatingsFormat::Comma),
            "ws" => Ok(RatingsFormat::Whitespace),
            other => Err(format!("unknown format {other:?} (expected mlcolon, csv, or ws)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Observed entries of a ratings matrix in COO form, entries sorted by
/// (row, col). `row_ids`/`col_ids` map dense indices back to the external
/// IDs they came from; synthetic data uses the identity mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<RatingEntry>,
    row_ids: Vec<u64>,
    col_ids: Vec<u64>,
}

impl SparseRatings {
    /// Builds from `(user, item, value)` triplets with arbitrary external
    /// IDs. IDs are remapped to dense indices by sorted order.
    pub fn from_triplets(triplets: &[(u64, u64, f64)]) -> Result<Self, DataError> {
        if triplets.is_empty() {
            return Err(DataError::Empty);
        }
        for &(user, item, value) in triplets {
            if !value.is_finite() {
                return Err(DataError::InvalidParameter(format!(
                    "non-finite rating for user {user}, item {item}"
                )));
            }
        }
        let mut row_ids: Vec<u64> = triplets.iter().map(|t| t.0).collect();
        row_ids.sort_unstable();
        row_ids.dedup();
        let mut col_ids: Vec<u64> = triplets.iter().map(|t| t.1).collect();
        col_ids.sort_unstable();
        col_ids.dedup();
        let row_index: HashMap<u64, usize> =
            row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let col_index: HashMap<u64, usize> =
            col_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut entries: Vec<RatingEntry> = triplets
            .iter()
            .map(|&(user, item, value)| RatingEntry {
                row: row_index[&user],
                col: col_index[&item],
                value,
            })
            .collect();
        entries.sort_unstable_by_key(|e| (e.row, e.col));
        for w in entries.windows(2) {
            if w[0].row == w[1].row && w[0].col == w[1].col {
                return Err(DataError::Duplicate {
                    user: row_ids[w[0].row],
                    item: col_ids[w[0].col],
                });
            }
        }
        Ok(SparseRatings {
            n_rows: row_ids.len(),
            n_cols: col_ids.len(),
            entries,
            row_ids,
            col_ids,
        })
    }

    /// Directly from dense-indexed entries (identity ID maps). Entries must
    /// be sorted, unique, and in bounds; used by generators that construct
    /// them that way.
    fn from_dense_parts(n_rows: usize, n_cols: usize, entries: Vec<RatingEntry>) -> Self {
        debug_assert!(entries
            .windows(2)
            .all(|w| (w[0].row, w[0].col) < (w[1].row, w[1].col)));
        debug_assert!(entries.iter().all(|e| e.row < n_rows && e.col < n_cols));
        SparseRatings {
            n_rows,
            n_cols,
            entries,
            row_ids: (0..n_rows as u64).collect(),
            col_ids: (0..n_cols as u64).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RatingEntry] {
        &self.entries
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[u64] {
        &self.col_ids
    }

    /// Frobenius norm over the observed entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.value * e.value).sum::<f64>().sqrt()
    }

    pub fn mean_value(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.value).sum::<f64>() / self.entries.len() as f64
    }

    /// Subset by positions into `entries`; keeps the full grid dimensions and
    /// ID maps so factor shapes stay compatible across a split.
    fn subset(&self, positions: &[usize]) -> SparseRatings {
        SparseRatings {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            entries: positions.iter().map(|&i| self.entries[i]).collect(),
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
        }
    }
}

/// Parses `user item rating [timestamp]` lines. Blank lines and lines
/// starting with `#` are skipped; the timestamp, when present, is ignored.
/// Duplicate (user, item) pairs and malformed fields report the 1-based line.
pub fn parse_ratings<R: BufRead>(reader: R, format: RatingsFormat) -> Result<SparseRatings, DataError> {
    let mut triplets: Vec<(u64, u64, f64)> = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingsFormat::DoubleColon => text.split("::").collect(),
            RatingsFormat::Comma => text.split(',').map(str::trim).collect(),
            RatingsFormat::Whitespace => text.split_whitespace().collect(),
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(DataError::Malformed {
                line: lineno,
                reason: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        let user: u64 = fields[0].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad user id {:?}", fields[0]),
        })?;
        let item: u64 = fields[1].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad item id {:?}", fields[1]),
        })?;
        let value: f64 = fields[2].parse().map_err(|_| DataError::Malformed {
            line: lineno,
            reason: format!("bad rating {:?}", fields[2]),
        })?;
        if !value.is_finite() {
            return Err(DataError::Malformed {
                line: lineno,
                reason: format!("non-finite rating {value}"),
            });
        }
        if seen.insert((user, item), lineno).is_some() {
            return Err(DataError::DuplicateLine { line: lineno, user, item });
        }
        triplets.push((user, item, value));
    }
    SparseRatings::from_triplets(&triplets)
}

/// Writes triplets using the original external IDs, one entry per line in
/// (row, col) order. Values are printed in shortest round-trip form, so
/// parsing the output reproduces the structure bit for bit.
pub fn write_ratings<W: Write>(
    out: &mut W,
    ratings: &SparseRatings,
    format: RatingsFormat,
) -> std::io::Result<()> {
    let sep = format.write_separator();
    for e in ratings.entries() {
        writeln!(
            out,
            "{}{sep}{}{sep}{}",
            ratings.row_ids[e.row], ratings.col_ids[e.col], e.value
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SplitRatings {
    pub train: SparseRatings,
    pub test: SparseRatings,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Seeded disjoint train/test split. Train gets `round(fraction * N)`
/// entries; both sides keep the full grid dimensions.
pub fn split(ratings: &SparseRatings, train_fraction: f64, seed: u64) -> Result<SplitRatings, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ratings.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 {
        return Err(DataError::DegenerateSplit { side: "train", n, fraction: train_fraction });
    }
    if n_train >= n {
        return Err(DataError::DegenerateSplit { side: "test", n, fraction: train_fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_pos = order[..n_train].to_vec();
    let mut test_pos = order[n_train..].to_vec();
    train_pos.sort_unstable();
    test_pos.sort_unstable();
    Ok(SplitRatings {
        train: ratings.subset(&train_pos),
        test: ratings.subset(&test_pos),
        seed,
        train_fraction,
    })
}

/// Generates a noisy low-rank nonnegative instance: A = U* V* + noise with
/// U*, V* uniform on [0, 1), entries clipped at 0, and `density * m * n`
/// cells (rounded) observed. Fully determined by the seed.
pub fn synthesize(
    m: usize,
    n: usize,
    t_true: usize,
    density: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<SparseRatings, DataError> {
    if m == 0 || n == 0 {
        return Err(DataError::InvalidParameter("matrix dimensions must be positive".into()));
    }
    if t_true == 0 {
        return Err(DataError::InvalidParameter("t_true must be at least 1".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if !noise_sd.is_finite() || noise_sd < 0.0 {
        return Err(DataError::InvalidParameter(format!(
            "noise_sd must be finite and >= 0, got {noise_sd}"
        )));
    }
    let cells = m * n;
    let observed = (density * cells as f64).round() as usize;
    if observed == 0 {
        return Err(DataError::InvalidParameter(format!(
            "density {density} rounds to zero observed entries on a {m}x{n} grid"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..m * t_true).map(|_| rng.random_range(0.0..1.0)).collect();
    let v: Vec<f64> = (0..t_true * n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut order: Vec<usize> = (0..cells).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..observed].to_vec();
    chosen.sort_unstable();

    let entries: Vec<RatingEntry> = chosen
        .into_iter()
        .map(|cell| {
            let i = cell / n;
            let j = cell % n;
            let mut value = 0.0;
            for r in 0..t_true {
                value += u[i * t_true + r] * v[r * n + j];
            }
            if noise_sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                value += noise_sd * z;
            }
            RatingEntry { row: i, col: j, value: value.max(0.0) }
        })
        .collect();
    Ok(SparseRatings::from_dense_parts(m, n, entries))
}

/// Paths produced by [`write_split_manifest`].
#[derive(Debug, Clone)]
pub struct SplitManifest {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub meta_path: PathBuf,
}

/// Writes `train.<ext>` and `test.<ext>` in the given format plus a
/// `split.json` sidecar recording the seed, fraction, and counts.
pub fn write_split_manifest(
    dir: &Path,
    split: &SplitRatings,
    format: RatingsFormat,
) -> Result<SplitManifest, DataError> {
    std::fs::create_dir_all(dir)?;
    let train_path = dir.join(format!("train.{}", format.extension()));
    let test_path = dir.join(format!("test.{}", format.extension()));
    let meta_path = dir.join("split.json");

    let mut train_file = std::io::BufWriter::new(std::fs::File::create(&train_path)?);
    write_ratings(&mut train_file, &split.train, format)?;
    train_file.flush()?;
    let mut test_file = std::io::BufWriter::new(std::fs::File::create(&test_path)?);
    write_ratings(&mut test_file, &split.test, format)?;
    test_file.flush()?;

    let meta = serde_json::json!({
        "seed": split.seed,
        "train_fraction": split.train_fraction,
        "n_rows": split.train.n_rows(),
        "n_cols": split.train.n_cols(),
        "n_train": split.train.len(),
        "n_test": split.test.len(),
        "format": format.name(),
    });
    std::fs::write(&meta_path, format!("{:#}\n", meta))?;
    Ok(SplitManifest { train_path, test_path, meta_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_line_fixture_remaps_to_dense_indices() {
        let input = "1::10::4.0::978300760\n2::10::3.0::978302109";
        let r = parse_ratings(input.as_bytes(), RatingsFormat::DoubleColon).unwrap();
        assert_eq!(r.n_rows(), 2);
        assert_eq!(r.n_cols(), 1);
        assert_eq!(
            r.entries(),
            &[
                RatingEntry { row: 0, col: 0, value: 4.0 },
                RatingEntry { row: 1, col: 0, value: 3.0 },
            ]
        );
        assert_eq!(r.row_ids(), &[1, 2]);
        assert_eq!(r.col_ids(), &[10]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(
            parse_ratings("".as_bytes(), RatingsFormat::Comma),
            Err(DataError::Empty)
        ));
        // Comments and blank lines alone also leave nothing.
        assert!(matches!(
            parse_ratings("# header\n\n  \n".as_bytes(), RatingsFormat::Comma),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn duplicate_pair_names_the_line() {
        let mut text = String::new();
        for i in 0..9u64 {
            text.push_str(&format!("{}::{}::{}\n", i / 3 + 1, i % 3 + 1, 3.0));
        }
        text.push_str("2::3::4.5\n"); // line 10 repeats the (2,3) pair
        let err = parse_ratings(text.as_bytes(), RatingsFormat::DoubleColon).unwrap_err();
        match err {
            DataError::DuplicateLine { line, user, item } => {
                assert_eq!(line, 10);
                assert_eq!((user, item), (2, 3));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let err = parse_ratings("1::2::3.0\nbogus\n".as_bytes(), RatingsFormat::DoubleColon)
            .unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
        let err = parse_ratings("1,2,notanumber".as_bytes(), RatingsFormat::Comma).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
        let err = parse_ratings("1 2 3 4 5".as_bytes(), RatingsFormat::Whitespace).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
    }

    #[test]
    fn all_formats_parse_the_same_fixture_identically() {
        let colon = "5::7::2.5\n3::7::1\n3::9::4.5\n";
        let comma = "5,7,2.5\n3, 7, 1\n3,9,4.5\n";
        let ws = "5 7 2.5\n3\t7\t1\n3 9 4.5\n";
        let a = parse_ratings(colon.as_bytes(), RatingsFormat::DoubleColon).unwrap();
        let b = parse_ratings(comma.as_bytes(), RatingsFormat::Comma).unwrap();
        let c = parse_ratings(ws.as_bytes(), RatingsFormat::Whitespace).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.n_rows(), 2);
        assert_eq!(a.n_cols(), 2);
    }

    #[test]
    fn round_trip_is_the_identity() {
        // IDs deliberately out of order and non-contiguous.
        let triplets = [
            (42u64, 1000u64, 3.5),
            (7, 3, 0.125),
            (42, 3, 1.0),
            (9, 1000, 2.0),
        ];
        let original = SparseRatings::from_triplets(&triplets).unwrap();
        for format in [RatingsFormat::DoubleColon, RatingsFormat::Comma, RatingsFormat::Whitespace] {
            let mut buf = Vec::new();
            write_ratings(&mut buf, &original, format).unwrap();
            let reparsed = parse_ratings(buf.as_slice(), format).unwrap();
            assert_eq!(original, reparsed);
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let triplets: Vec<(u64, u64, f64)> =
            (0..10).map(|i| (i as u64 / 5, i as u64 % 5, i as f64)).collect();
        let ratings = SparseRatings::from_triplets(&triplets).unwrap();
        let s = split(&ratings, 0.7, 99).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.test.len(), 3);
        // Disjoint and exhaustive: merged entries equal the originals.
        let mut merged: Vec<RatingEntry> = s
            .train
            .entries()
            .iter()
            .chain(s.test.entries())
            .copied()
            .collect();
        merged.sort_unstable_by_key(|e| (e.row, e.col));
        assert_eq!(merged, ratings.entries());
        // Dimensions survive on both sides.
        assert_eq!(s.train.n_rows(), ratings.n_rows());
        assert_eq!(s.test.n_cols(), ratings.n_cols());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ratings = synthesize(40, 25, 2, 1.0, 0.0, 5).unwrap();
        let a = split(&ratings, 0.7, 11).unwrap();
        let b = split(&ratings, 0.7, 11).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = split(&ratings, 0.7, 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let triplets: Vec<(u64, u64, f64)> = (0..4).map(|i| (i, i, 1.0)).collect();
        let ratings = SparseRatings::from_triplets(&triplets).unwrap();
        assert!(matches!(
            split(&ratings, 0.01, 1),
            Err(DataError::DegenerateSplit { side: "train", .. })
        ));
        assert!(matches!(
            split(&ratings, 0.99, 1),
            Err(DataError::DegenerateSplit { side: "test", .. })
        ));
        assert!(split(&ratings, 1.2, 1).is_err());
    }

    #[test]
    fn synthesize_observed_count_contract() {
        let r = synthesize(20, 15, 3, 0.5, 0.1, 7).unwrap();
        assert_eq!(r.len(), 150);
        assert_eq!(r.n_rows(), 20);
        assert_eq!(r.n_cols(), 15);
        assert!(r.entries().iter().all(|e| e.value >= 0.0 && e.value.is_finite()));
    }

    #[test]
    fn synthesize_full_density_observes_everything() {
        let r = synthesize(6, 5, 2, 1.0, 0.0, 3).unwrap();
        assert_eq!(r.len(), 30);
        let r2 = synthesize(6, 5, 2, 1.0, 0.0, 3).unwrap();
        assert_eq!(r, r2);
        let r3 = synthesize(6, 5, 2, 1.0, 0.0, 4).unwrap();
        assert_ne!(r, r3);
    }

    #[test]
    fn synthesize_validates_parameters() {
        assert!(synthesize(0, 5, 2, 0.5, 0.0, 1).is_err());
        assert!(synthesize(5, 5, 0, 0.5, 0.0, 1).is_err());
        assert!(synthesize(5, 5, 2, 0.0, 0.0, 1).is_err());
        assert!(synthesize(5, 5, 2, 1.5, 0.0, 1).is_err());
        assert!(synthesize(5, 5, 2, 0.5, -1.0, 1).is_err());
        assert!(synthesize(100, 100, 2, 1e-9, 0.0, 1).is_err());
    }

    #[test]
    fn from_triplets_rejects_duplicates_and_bad_values() {
        assert!(matches!(
            SparseRatings::from_triplets(&[(1, 2, 3.0), (1, 2, 4.0)]),
            Err(DataError::Duplicate { user: 1, item: 2 })
        ));
        assert!(SparseRatings::from_triplets(&[(1, 2, f64::NAN)]).is_err());
        assert!(matches!(SparseRatings::from_triplets(&[]), Err(DataError::Empty)));
    }
}
