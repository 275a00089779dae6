//! Regenerates the bundled synthetic fixtures under fixtures/.
//! The files are committed; this exists to document and reproduce them.

use mortdef_core::data::{save_fund_csv, save_reference_csv, AgeYearGrid};
use mortdef_core::synthetic::*;

fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    std::fs::create_dir_all(&dir).unwrap();

    let (fund1, reference_bra) = bundled_fund1().unwrap();
    save_fund_csv(&fund1, dir.join("fund1.csv")).unwrap();
    save_reference_csv(&reference_bra, dir.join("reference_bra.csv")).unwrap();

    let (fund2, _) = bundled_fund2().unwrap();
    save_fund_csv(&fund2, dir.join("fund2.csv")).unwrap();

    // sparse industry-style table: three published years
    let sparse_grid = AgeYearGrid::with_sparse_years(
        (60..=89).collect(),
        vec![2010, 2015, 2021],
    )
    .unwrap();
    let ind = ind_like_surface().table(&sparse_grid, "IND").unwrap();
    save_reference_csv(&ind, dir.join("reference_ind_sparse.csv")).unwrap();

    // national-style table truncated at age 80, for extrapolation demos
    let short_grid = AgeYearGrid::from_ranges(60, 80, 2013, 2019).unwrap();
    let bra80 = bra_like_surface().table(&short_grid, "BRA").unwrap();
    save_reference_csv(&bra80, dir.join("reference_bra_ages60_80.csv")).unwrap();

    println!("fixtures written to {}", dir.display());
}
