//! Toy external validator: quadratic implicit error `mean((x - c)^2)` around
//! a fixed center, served over line-delimited JSON on stdin/stdout.

use std::io::{self, BufRead, Write};

use serde_json::{json, Value};

fn center(i: usize) -> f64 {
    0.3 + 0.4 * ((i as f64 * 0.618_033_988_75) % 1.0)
}

fn answer(line: &str) -> Value {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"id": -1, "error": format!("bad request: {e}")}),
    };
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    let Some(state) = req.get("state").and_then(Value::as_array) else {
        return json!({"id": id, "error": "missing state"});
    };
    let x: Option<Vec<f64>> = state.iter().map(Value::as_f64).collect();
    match x {
        Some(x) if !x.is_empty() => {
            let e = x.iter().enumerate().map(|(i, v)| (v - center(i)).powi(2)).sum::<f64>() / x.len() as f64;
            json!({"id": id, "e_imp": [e], "e_o": e})
        }
        _ => json!({"id": id, "error": "state must be a nonempty array of numbers"}),
    }
}

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(out, "{}", answer(&line))?;
        out.flush()?;
    }
    Ok(())
}
