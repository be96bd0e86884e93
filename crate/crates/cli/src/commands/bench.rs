use spfno_core::transforms::timing::{bench_transform, BENCH_HEADER};
use spfno_core::transforms::BasisKind;

use crate::error::{CliError, Result};
use crate::run::{write_text, Run, MANIFEST_FILE};

fn parse_size(token: &str) -> Result<usize> {
    let bad = || CliError::Config(format!("--sizes: cannot parse '{token}'"));
    match token.split_once('^') {
        Some((base, exp)) => {
            let base: usize = base.trim().parse().map_err(|_| bad())?;
            let exp: u32 = exp.trim().parse().map_err(|_| bad())?;
            base.checked_pow(exp).ok_or_else(bad)
        }
        None => token.trim().parse().map_err(|_| bad()),
    }
}

/// Comma-separated sizes; `a..b` expands to `a, 2a, 4a, ...` up to `b`.
/// Each size may be written as `2^k`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    let mut sizes = Vec::new();
    for token in spec.split(',').filter(|t| !t.trim().is_empty()) {
        match token.split_once("..") {
            Some((lo, hi)) => {
                let (mut n, hi) = (parse_size(lo)?, parse_size(hi)?);
                if n == 0 {
                    return Err(CliError::Config("--sizes: a range cannot start at 0".into()));
                }
                while n <= hi {
                    sizes.push(n);
                    n *= 2;
                }
            }
            None => sizes.push(parse_size(token)?),
        }
    }
    if sizes.is_empty() {
        return Err(CliError::Config("--sizes: no sizes given".into()));
    }
    if let Some(n) = sizes.iter().find(|&&n| n < 3) {
        return Err(CliError::Config(format!("--sizes: every size must be at least 3, got {n}")));
    }
    Ok(sizes)
}

pub fn run(run: &Run, bases: &[BasisKind], sizes: &str, reps: usize) -> Result<()> {
    let sizes = parse_sizes(sizes)?;
    if reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let out = run.prepare_out()?;
    let mut lines = vec![BENCH_HEADER.to_string()];
    println!("{BENCH_HEADER}");
    for &basis in bases {
        for row in bench_transform(basis, &sizes, reps)? {
            let line = row.csv_row();
            println!("{line}");
            lines.push(line);
        }
    }
    if let Some(out) = out {
        let path = out.join("bench.csv");
        write_text(&path, &(lines.join("\n") + "\n"))?;
        run.write_manifest(
            serde_json::json!({ "bases": bases, "sizes": sizes, "reps": reps }),
            run.seed.unwrap_or(0),
            Vec::new(),
            vec![path, out.join(MANIFEST_FILE)],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_expand_ranges_and_powers() {
        assert_eq!(parse_sizes("2^10..2^12").unwrap(), vec![1024, 2048, 4096]);
        assert_eq!(parse_sizes("5,17,65").unwrap(), vec![5, 17, 65]);
        assert_eq!(parse_sizes("3..12").unwrap(), vec![3, 6, 12]);
        assert_eq!(parse_sizes("100").unwrap(), vec![100]);
    }

    #[test]
    fn sizes_reject_small_or_malformed_input() {
        assert!(parse_sizes("2").is_err());
        assert!(parse_sizes("").is_err());
        assert!(parse_sizes("2^x").is_err());
        assert!(parse_sizes("0..8").is_err());
    }
}
