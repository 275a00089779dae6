//! Age-by-year grids and the on-disk fund / reference-table formats.
//!
//! Two CSV schemas are supported (UTF-8, comma separated, `\n` line endings,
//! `.` decimal separator):
//!
//! * fund file: `age,year,exposure,deaths`
//! * reference file: `age,year,mx`
//!
//! Every cell of the inferred grid must be present exactly once. Missing
//! cells are hard errors, never implicit zeros.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rectangular grid of integer ages and calendar years.
///
/// Ages are always contiguous (step 1). Years are strictly increasing and
/// usually contiguous; reference tables may carry gap years (see
/// [`AgeYearGrid::years_contiguous`]), but model fitting requires a
/// contiguous grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeYearGrid {
    ages: Vec<i32>,
    years: Vec<i32>,
}

impl AgeYearGrid {
    /// Fully contiguous grid on both axes.
    pub fn new(ages: Vec<i32>, years: Vec<i32>) -> Result<Self> {
        let grid = Self::with_sparse_years(ages, years)?;
        if !grid.years_contiguous() {
            return Err(Error::Data(format!(
                "years not contiguous: {:?}",
                grid.years
            )));
        }
        Ok(grid)
    }

    /// Grid whose years may have gaps (sparse reference tables).
    pub fn with_sparse_years(ages: Vec<i32>, years: Vec<i32>) -> Result<Self> {
        if ages.is_empty() || years.is_empty() {
            return Err(Error::Data("grid must be non-empty on both axes".into()));
        }
        for w in ages.windows(2) {
            if w[1] != w[0] + 1 {
                return Err(Error::Data(format!(
                    "ages not contiguous: gap between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        for w in years.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!(
                    "years not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { ages, years })
    }

    pub fn from_ranges(age_lo: i32, age_hi: i32, year_lo: i32, year_hi: i32) -> Result<Self> {
        if age_hi < age_lo || year_hi < year_lo {
            return Err(Error::Data("empty age or year range".into()));
        }
        Self::new((age_lo..=age_hi).collect(), (year_lo..=year_hi).collect())
    }

    pub fn ages(&self) -> &[i32] {
        &self.ages
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn n_ages(&self) -> usize {
        self.ages.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_cells(&self) -> usize {
        self.ages.len() * self.years.len()
    }

    pub fn years_contiguous(&self) -> bool {
        self.years.windows(2).all(|w| w[1] == w[0] + 1)
    }

    pub fn age_index(&self, age: i32) -> Option<usize> {
        let i = (age - self.ages[0]) as i64;
        (0..self.ages.len() as i64).contains(&i).then_some(i as usize)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    /// Cells in row-major order: all years of the first age, then the next age.
    pub fn cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.ages
            .iter()
            .flat_map(move |&a| self.years.iter().map(move |&y| (a, y)))
    }
}

/// Death counts and central exposures on an age-by-year grid.
///
/// Matrices are indexed `[age_index, year_index]`. Deaths must be zero
/// wherever exposure is zero; such cells are excluded from likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct FundDataset {
    grid: AgeYearGrid,
    exposures: DMatrix<f64>,
    deaths: DMatrix<u64>,
}

impl FundDataset {
    pub fn new(grid: AgeYearGrid, exposures: DMatrix<f64>, deaths: DMatrix<u64>) -> Result<Self> {
        if !grid.years_contiguous() {
            return Err(Error::Data("fund grid must have contiguous years".into()));
        }
        let shape = (grid.n_ages(), grid.n_years());
        if exposures.shape() != shape || deaths.shape() != shape {
            return Err(Error::Data(format!(
                "matrix shape {:?}/{:?} does not match grid {:?}",
                exposures.shape(),
                deaths.shape(),
                shape
            )));
        }
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let e = exposures[(i, j)];
                if !e.is_finite() || e < 0.0 {
                    return Err(Error::Data(format!(
                        "negative or non-finite exposure {} at age {}, year {}",
                        e, grid.ages()[i], grid.years()[j]
                    )));
                }
                if e == 0.0 && deaths[(i, j)] != 0 {
                    return Err(Error::Data(format!(
                        "{} deaths with zero exposure at age {}, year {}",
                        deaths[(i, j)],
                        grid.ages()[i],
                        grid.years()[j]
                    )));
                }
            }
        }
        Ok(Self {
            grid,
            exposures,
            deaths,
        })
    }

    pub fn grid(&self) -> &AgeYearGrid {
        &self.grid
    }

    pub fn exposures(&self) -> &DMatrix<f64> {
        &self.exposures
    }

    pub fn deaths(&self) -> &DMatrix<u64> {
        &self.deaths
    }

    pub fn exposure_at(&self, age: i32, year: i32) -> Option<f64> {
        let i = self.grid.age_index(age)?;
        let j = self.grid.year_index(year)?;
        Some(self.exposures[(i, j)])
    }

    pub fn deaths_at(&self, age: i32, year: i32) -> Option<u64> {
        let i = self.grid.age_index(age)?;
        let j = self.grid.year_index(year)?;
        Some(self.deaths[(i, j)])
    }

    /// Cells excluded from likelihood evaluation.
    pub fn zero_exposure_cells(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for (i, &a) in self.grid.ages().iter().enumerate() {
            for (j, &y) in self.grid.years().iter().enumerate() {
                if self.exposures[(i, j)] == 0.0 {
                    out.push((a, y));
                }
            }
        }
        out
    }

    /// Restrict to an inclusive year range.
    pub fn restrict_years(&self, year_lo: i32, year_hi: i32) -> Result<Self> {
        let keep: Vec<usize> = self
            .grid
            .years()
            .iter()
            .enumerate()
            .filter(|(_, &y)| (year_lo..=year_hi).contains(&y))
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return Err(Error::Data(format!(
                "no data years inside {year_lo}..={year_hi}"
            )));
        }
        let years: Vec<i32> = keep.iter().map(|&j| self.grid.years()[j]).collect();
        let grid = AgeYearGrid::new(self.grid.ages().to_vec(), years)?;
        let exposures = self.exposures.select_columns(&keep);
        let deaths = self.deaths.select_columns(&keep);
        Self::new(grid, exposures, deaths)
    }

    /// Copy with one year's exposures and deaths zeroed out, so that the
    /// year contributes nothing to a likelihood while the grid stays intact.
    pub fn mask_year(&self, year: i32) -> Result<Self> {
        let j = self
            .grid
            .year_index(year)
            .ok_or_else(|| Error::Data(format!("year {year} not in grid")))?;
        let mut exposures = self.exposures.clone();
        let mut deaths = self.deaths.clone();
        for i in 0..self.grid.n_ages() {
            exposures[(i, j)] = 0.0;
            deaths[(i, j)] = 0;
        }
        Self::new(self.grid.clone(), exposures, deaths)
    }
}

/// Central mortality rates `m_{x,t}` for a named reference population.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    grid: AgeYearGrid,
    rates: DMatrix<f64>,
    label: String,
}

impl ReferenceTable {
    pub fn new(grid: AgeYearGrid, rates: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let shape = (grid.n_ages(), grid.n_years());
        if rates.shape() != shape {
            return Err(Error::Data(format!(
                "rate matrix shape {:?} does not match grid {:?}",
                rates.shape(),
                shape
            )));
        }
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let m = rates[(i, j)];
                if !(m.is_finite() && m > 0.0) {
                    return Err(Error::Data(format!(
                        "non-positive rate {} at age {}, year {}",
                        m,
                        grid.ages()[i],
                        grid.years()[j]
                    )));
                }
            }
        }
        Ok(Self {
            grid,
            rates,
            label: label.into(),
        })
    }

    pub fn grid(&self) -> &AgeYearGrid {
        &self.grid
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Sparse-year tables must be interpolated before model fitting.
    pub fn needs_interpolation(&self) -> bool {
        !self.grid.years_contiguous()
    }

    pub fn rate_at(&self, age: i32, year: i32) -> Option<f64> {
        let i = self.grid.age_index(age)?;
        let j = self.grid.year_index(year)?;
        Some(self.rates[(i, j)])
    }

    /// Check that every cell of `grid` is covered by this table.
    pub fn covers(&self, grid: &AgeYearGrid) -> Result<()> {
        for (a, y) in grid.cells() {
            if self.rate_at(a, y).is_none() {
                return Err(Error::GridMismatch(format!(
                    "reference table {} does not cover age {}, year {}",
                    self.label, a, y
                )));
            }
        }
        Ok(())
    }
}

/// Per-year exposure and death totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YearTotals {
    pub year: i32,
    pub exposure: f64,
    pub deaths: u64,
}

/// Sum exposures and deaths over all ages, one entry per grid year.
pub fn aggregate_totals(data: &FundDataset) -> Vec<YearTotals> {
    data.grid()
        .years()
        .iter()
        .enumerate()
        .map(|(j, &year)| {
            let mut exposure = 0.0;
            let mut deaths = 0u64;
            for i in 0..data.grid().n_ages() {
                exposure += data.exposures()[(i, j)];
                deaths += data.deaths()[(i, j)];
            }
            YearTotals {
                year,
                exposure,
                deaths,
            }
        })
        .collect()
}

const FUND_HEADER: &str = "age,year,exposure,deaths";
const REFERENCE_HEADER: &str = "age,year,mx";

struct RawRow {
    line: u64,
    age: i32,
    year: i32,
    values: Vec<f64>,
}

/// Read and validate the raw rows shared by both CSV schemas.
fn read_rows(path: &Path, expected_header: &str, n_values: usize) -> Result<Vec<RawRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim_end_matches('\r'),
        None => {
            return Err(Error::Parse {
                path: path_str,
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    if header != expected_header {
        return Err(Error::Parse {
            path: path_str,
            line: 1,
            message: format!("header must be exactly `{expected_header}`, got `{header}`"),
        });
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in lines {
        let line = idx as u64 + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 2 + n_values {
            return Err(Error::Parse {
                path: path_str,
                line,
                message: format!("expected {} fields, got {}", 2 + n_values, fields.len()),
            });
        }
        let parse_int = |s: &str, what: &str| -> Result<i32> {
            s.trim().parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line,
                message: format!("malformed {what} `{s}`"),
            })
        };
        let age = parse_int(fields[0], "age")?;
        let year = parse_int(fields[1], "year")?;
        let mut values = Vec::with_capacity(n_values);
        for f in &fields[2..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line,
                message: format!("malformed value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line,
                    message: format!("non-finite value `{f}`"),
                });
            }
            values.push(v);
        }
        if !seen.insert((age, year)) {
            return Err(Error::Parse {
                path: path_str,
                line,
                message: format!("duplicate (age, year) pair ({age}, {year})"),
            });
        }
        rows.push(RawRow {
            line,
            age,
            year,
            values,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path_str,
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

fn infer_axes(rows: &[RawRow]) -> (Vec<i32>, Vec<i32>) {
    let ages: BTreeSet<i32> = rows.iter().map(|r| r.age).collect();
    let years: BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
    (ages.into_iter().collect(), years.into_iter().collect())
}

fn missing_cells_error(path: &Path, grid: &AgeYearGrid, present: &BTreeSet<(i32, i32)>) -> Error {
    let missing: Vec<(i32, i32)> = grid.cells().filter(|c| !present.contains(c)).collect();
    let mut msg = format!("{} missing cell(s):", missing.len());
    for (a, y) in missing.iter().take(10) {
        let _ = write!(msg, " ({a}, {y})");
    }
    if missing.len() > 10 {
        let _ = write!(msg, " ...");
    }
    Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: msg,
    }
}

/// Load a fund file (`age,year,exposure,deaths`). The grid is inferred from
/// the rows; every cell must be present.
pub fn load_fund_csv(path: impl AsRef<Path>) -> Result<FundDataset> {
    let path = path.as_ref();
    let rows = read_rows(path, FUND_HEADER, 2)?;
    let (ages, years) = infer_axes(&rows);
    let grid = AgeYearGrid::new(ages, years).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: format!("non-contiguous grid: {e}"),
    })?;
    let present: BTreeSet<(i32, i32)> = rows.iter().map(|r| (r.age, r.year)).collect();
    if present.len() != grid.n_cells() {
        return Err(missing_cells_error(path, &grid, &present));
    }
    let mut exposures = DMatrix::zeros(grid.n_ages(), grid.n_years());
    let mut deaths = DMatrix::zeros(grid.n_ages(), grid.n_years());
    for r in &rows {
        let i = grid.age_index(r.age).unwrap();
        let j = grid.year_index(r.year).unwrap();
        let e = r.values[0];
        let d = r.values[1];
        if e < 0.0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: r.line,
                message: format!("negative exposure {e} at row {}", r.line),
            });
        }
        if d < 0.0 || d.fract() != 0.0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: r.line,
                message: format!("deaths must be a non-negative integer, got {d}"),
            });
        }
        if e == 0.0 && d > 0.0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: r.line,
                message: format!("{d} deaths with zero exposure"),
            });
        }
        exposures[(i, j)] = e;
        deaths[(i, j)] = d as u64;
    }
    FundDataset::new(grid, exposures, deaths)
}

/// Load a reference table (`age,year,mx`). Years may be sparse; the label
/// comes from the caller, never from file contents.
pub fn load_reference_csv(path: impl AsRef<Path>, label: impl Into<String>) -> Result<ReferenceTable> {
    let path = path.as_ref();
    let rows = read_rows(path, REFERENCE_HEADER, 1)?;
    let (ages, years) = infer_axes(&rows);
    let grid = AgeYearGrid::with_sparse_years(ages, years).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: format!("{e}"),
    })?;
    let present: BTreeSet<(i32, i32)> = rows.iter().map(|r| (r.age, r.year)).collect();
    if present.len() != grid.n_cells() {
        return Err(missing_cells_error(path, &grid, &present));
    }
    let mut rates = DMatrix::zeros(grid.n_ages(), grid.n_years());
    for r in &rows {
        let m = r.values[0];
        if m <= 0.0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: r.line,
                message: format!("non-positive rate {m}"),
            });
        }
        let i = grid.age_index(r.age).unwrap();
        let j = grid.year_index(r.year).unwrap();
        rates[(i, j)] = m;
    }
    ReferenceTable::new(grid, rates, label)
}

/// Write a fund dataset in the loader's schema. Floats use the shortest
/// representation that round-trips, so save followed by load is exact.
pub fn save_fund_csv(data: &FundDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(FUND_HEADER);
    out.push('\n');
    for (i, &a) in data.grid().ages().iter().enumerate() {
        for (j, &y) in data.grid().years().iter().enumerate() {
            let _ = writeln!(
                out,
                "{a},{y},{},{}",
                data.exposures()[(i, j)],
                data.deaths()[(i, j)]
            );
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write a reference table in the loader's schema.
pub fn save_reference_csv(table: &ReferenceTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(REFERENCE_HEADER);
    out.push('\n');
    for (i, &a) in table.grid().ages().iter().enumerate() {
        for (j, &y) in table.grid().years().iter().enumerate() {
            let _ = writeln!(out, "{a},{y},{}", table.rates()[(i, j)]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn small_fund_csv() -> String {
        let mut s = String::from("age,year,exposure,deaths\n");
        for a in 60..90 {
            for y in 2013..2020 {
                s.push_str(&format!("{a},{y},{}.5,{}\n", 100 + a, (a + y) % 3));
            }
        }
        s
    }

    #[test]
    fn loads_complete_fund_grid() {
        let f = write_temp(&small_fund_csv());
        let data = load_fund_csv(f.path()).unwrap();
        assert_eq!(data.grid().n_cells(), 210);
        assert_eq!(data.grid().n_ages(), 30);
        assert_eq!(data.grid().n_years(), 7);
        assert_eq!(data.exposure_at(60, 2013), Some(160.5));
    }

    #[test]
    fn negative_exposure_reports_row() {
        let mut s = String::from("age,year,exposure,deaths\n");
        s.push_str("70,2018,10,0\n");
        s.push_str("70,2019,-1,0\n");
        s.push_str("71,2018,10,0\n");
        s.push_str("71,2019,10,0\n");
        let f = write_temp(&s);
        let err = load_fund_csv(f.path()).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("negative exposure"), "{msg}");
        assert!(msg.contains(":3:"), "row number missing from: {msg}");
    }

    #[test]
    fn missing_cell_is_listed() {
        let mut s = small_fund_csv();
        let needle = "65,2015,";
        let start = s.find(needle).unwrap();
        let end = s[start..].find('\n').unwrap() + start + 1;
        s.replace_range(start..end, "");
        let f = write_temp(&s);
        let err = load_fund_csv(f.path()).unwrap_err();
        assert!(format!("{err}").contains("(65, 2015)"), "{err}");
    }

    #[test]
    fn duplicate_cell_rejected() {
        let mut s = small_fund_csv();
        s.push_str("60,2013,1,0\n");
        let f = write_temp(&s);
        let err = load_fund_csv(f.path()).unwrap_err();
        assert!(format!("{err}").contains("duplicate"), "{err}");
    }

    #[test]
    fn wrong_header_rejected() {
        let f = write_temp("age,year,exposures,deaths\n60,2013,1,0\n");
        assert!(load_fund_csv(f.path()).is_err());
    }

    #[test]
    fn noncontiguous_ages_rejected() {
        let mut s = String::from("age,year,exposure,deaths\n");
        for a in [60, 61, 63] {
            s.push_str(&format!("{a},2013,1,0\n"));
        }
        let f = write_temp(&s);
        let err = load_fund_csv(f.path()).unwrap_err();
        assert!(format!("{err}").contains("contiguous"), "{err}");
    }

    #[test]
    fn zero_deaths_required_on_zero_exposure() {
        let f = write_temp("age,year,exposure,deaths\n60,2013,0,2\n");
        let err = load_fund_csv(f.path()).unwrap_err();
        assert!(format!("{err}").contains("zero exposure"), "{err}");
    }

    #[test]
    fn reference_accepts_sparse_years() {
        let mut s = String::from("age,year,mx\n");
        for a in 60..=62 {
            for y in [2010, 2015, 2021] {
                s.push_str(&format!("{a},{y},0.01\n"));
            }
        }
        let f = write_temp(&s);
        let table = load_reference_csv(f.path(), "IND").unwrap();
        assert!(table.needs_interpolation());
        assert_eq!(table.grid().years(), &[2010, 2015, 2021]);
        assert_eq!(table.label(), "IND");
    }

    #[test]
    fn reference_rejects_zero_rate() {
        let f = write_temp("age,year,mx\n60,2013,0.0\n");
        let err = load_reference_csv(f.path(), "BRA").unwrap_err();
        assert!(format!("{err}").contains("non-positive rate"), "{err}");
    }

    #[test]
    fn totals_sum_over_ages() {
        let grid = AgeYearGrid::from_ranges(60, 61, 2018, 2018).unwrap();
        let exposures = DMatrix::from_row_slice(2, 1, &[4000.0, 113.0]);
        let deaths = DMatrix::from_row_slice(2, 1, &[30u64, 9]);
        let data = FundDataset::new(grid, exposures, deaths).unwrap();
        let totals = aggregate_totals(&data);
        assert_eq!(totals.len(), 1);
        assert_eq!(totals[0].year, 2018);
        assert_eq!(totals[0].exposure, 4113.0);
        assert_eq!(totals[0].deaths, 39);
    }

    #[test]
    fn totals_all_zero_dataset() {
        let grid = AgeYearGrid::from_ranges(60, 62, 2013, 2014).unwrap();
        let data = FundDataset::new(
            grid,
            DMatrix::zeros(3, 2),
            DMatrix::from_element(3, 2, 0u64),
        )
        .unwrap();
        for t in aggregate_totals(&data) {
            assert_eq!(t.exposure, 0.0);
            assert_eq!(t.deaths, 0);
        }
    }

    #[test]
    fn totals_two_single_death_ages() {
        let grid = AgeYearGrid::from_ranges(60, 61, 2013, 2013).unwrap();
        let exposures = DMatrix::from_element(2, 1, 10.0);
        let deaths = DMatrix::from_row_slice(2, 1, &[1u64, 1]);
        let data = FundDataset::new(grid, exposures, deaths).unwrap();
        assert_eq!(aggregate_totals(&data)[0].deaths, 2);
    }

    #[test]
    fn mask_year_zeroes_one_column() {
        let f = write_temp(&small_fund_csv());
        let data = load_fund_csv(f.path()).unwrap();
        let masked = data.mask_year(2015).unwrap();
        assert_eq!(masked.exposure_at(70, 2015), Some(0.0));
        assert_eq!(masked.deaths_at(70, 2015), Some(0));
        assert_eq!(masked.exposure_at(70, 2016), data.exposure_at(70, 2016));
        assert_eq!(masked.grid(), data.grid());
    }

    #[test]
    fn restrict_years_keeps_range() {
        let f = write_temp(&small_fund_csv());
        let data = load_fund_csv(f.path()).unwrap();
        let sub = data.restrict_years(2013, 2018).unwrap();
        assert_eq!(sub.grid().n_years(), 6);
        assert_eq!(sub.deaths_at(60, 2018), data.deaths_at(60, 2018));
        assert!(sub.deaths_at(60, 2019).is_none());
    }
}
