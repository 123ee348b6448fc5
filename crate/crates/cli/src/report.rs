//! Result rows shared by all experiments.
//!
//! Wall-clock timings are printed to stderr only: the CSV artifacts must
//! be bitwise reproducible for a given (config, seed).

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub scenario: String,
    pub experiment: String,
    pub params: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl ResultRow {
    pub fn new(
        scenario: &str,
        experiment: &str,
        params: String,
        measured: f64,
        bound: f64,
        pass: bool,
    ) -> ResultRow {
        ResultRow {
            scenario: scenario.into(),
            experiment: experiment.into(),
            params,
            measured,
            bound,
            pass,
        }
    }

    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 && self.bound.is_finite() {
            self.measured / self.bound
        } else {
            0.0
        }
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("scenario,experiment,params,measured,bound,ratio,pass\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scenario,
            r.experiment,
            r.params,
            r.measured,
            r.bound,
            r.ratio(),
            r.pass
        ));
    }
    out
}

/// One human-readable line per row for the terminal.
pub fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        println!(
            "[{}] {} {} ({}): measured {} bound {}",
            if r.pass { "pass" } else { "FAIL" },
            r.experiment,
            r.scenario,
            r.params,
            r.measured,
            r.bound
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_schema_and_ratio() {
        let rows = vec![ResultRow::new("s", "e", "p=1".into(), 2.0, 4.0, true)];
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("scenario,experiment,params,measured,bound,ratio,pass\n"));
        assert!(csv.contains("s,e,p=1,2,4,0.5,true"));
    }

    #[test]
    fn ratio_zero_for_vacuous_bound() {
        let r = ResultRow::new("s", "e", "".into(), 1.0, f64::INFINITY, true);
        assert_eq!(r.ratio(), 0.0);
    }
}
