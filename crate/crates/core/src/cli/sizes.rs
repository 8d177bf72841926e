//! Message-size lists: `1K,64K,1M` or geometric sweeps `start:stop:xFACTOR`.

fn parse_size(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let digits_end = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, suffix) = t.split_at(digits_end);
    if num.is_empty() {
        return Err(format!("invalid size '{text}'"));
    }
    let shift = match suffix.to_ascii_uppercase().as_str() {
        "" | "B" => 0,
        "K" | "KB" | "KIB" => 10,
        "M" | "MB" | "MIB" => 20,
        "G" | "GB" | "GIB" => 30,
        "T" | "TB" | "TIB" => 40,
        _ => {
            return Err(format!(
                "invalid size suffix in '{text}' (use K, M, G or T)"
            ))
        }
    };
    let value: u64 = num
        .parse()
        .map_err(|_| format!("size '{text}' is too large"))?;
    value
        .checked_mul(1u64 << shift)
        .ok_or_else(|| format!("size '{text}' is too large"))
}

fn parse_range(text: &str) -> Result<Vec<u64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![parse_size(single)?]),
        [start, stop, factor] => {
            let start = parse_size(start)?;
            let stop = parse_size(stop)?;
            let factor: f64 = factor
                .trim()
                .strip_prefix(['x', 'X'])
                .ok_or_else(|| format!("range step must look like x2, got '{factor}'"))?
                .parse()
                .map_err(|_| format!("invalid range factor in '{text}'"))?;
            if start == 0 {
                return Ok(vec![0]);
            }
            if !(factor > 1.0 && factor.is_finite()) {
                return Err(format!("range factor must be greater than 1 in '{text}'"));
            }
            if stop < start {
                return Err(format!("range stop is below its start in '{text}'"));
            }
            let mut out = Vec::new();
            let mut k = 0;
            loop {
                let v = (start as f64 * factor.powi(k)).round();
                if v > stop as f64 {
                    break;
                }
                out.push(v as u64);
                k += 1;
            }
            Ok(out)
        }
        _ => Err(format!(
            "invalid size range '{text}' (expected start:stop:xFACTOR)"
        )),
    }
}

/// Parses a comma-separated list of sizes and ranges into a sorted, duplicate-free list of
/// positive sizes.
pub fn parse_sizes(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for item in text.split(',') {
        if item.trim().is_empty() {
            return Err(format!("empty entry in size list '{text}'"));
        }
        out.extend(parse_range(item)?);
    }
    if out.contains(&0) {
        return Err("sizes must be positive".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
