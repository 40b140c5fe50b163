//! Region specs given on the command line.

use lorank::genzoo::{Generator, RegionMask};

pub const REGION_HELP: &str = "\
Regions:
  A region is a set of output indices. Image generators lay outputs out
  row-major on a grid, so pixel (x, y) has index y*grid + x.

  --rect x0,y0,x1,y1   columns x0..x1 and rows y0..y1, start inclusive and
                       end exclusive. On a 4x4 grid, --rect 1,0,3,2 selects

                           . # # .
                           . # # .
                           . . . .
                           . . . .

                       which is indices 1, 2, 5, 6.
  --indices LIST       comma-separated indices or inclusive ranges, such as
                       0,1,8-11. Works for any generator.";

/// Parses `x0,y0,x1,y1`.
pub fn parse_rect(spec: &str) -> Result<(usize, usize, usize, usize), String> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("rectangle {spec:?} must have the form x0,y0,x1,y1"));
    }
    let mut v = [0usize; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| format!("rectangle {spec:?}: {p:?} is not a nonnegative integer"))?;
    }
    let [x0, y0, x1, y1] = v;
    if x1 <= x0 || y1 <= y0 {
        return Err(format!("rectangle {spec:?} is empty (need x0 < x1 and y0 < y1)"));
    }
    Ok((x0, y0, x1, y1))
}

/// Parses `0,1,8-11` into sorted, deduplicated indices.
pub fn parse_indices(spec: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("index list {spec:?}: bad item {part:?}");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(format!("index list {spec:?} is empty"));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Resolves a rectangle or index list against `g`'s outputs.
pub fn resolve(g: &Generator, rect: Option<&str>, indices: Option<&str>) -> Result<RegionMask, String> {
    match (rect, indices) {
        (Some(r), None) => {
            let (x0, y0, x1, y1) = parse_rect(r)?;
            let grid = g
                .grid()
                .ok_or_else(|| format!("generator has {} outputs and no square image grid; use --indices", g.d_x()))?;
            RegionMask::rect(grid, x0, y0, x1, y1).map_err(|e| e.to_string())
        }
        (None, Some(i)) => RegionMask::new(parse_indices(i)?, g.d_x()).map_err(|e| e.to_string()),
        _ => Err("give exactly one of --rect or --indices".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lorank::genzoo::make_linear_identity;

    #[test]
    fn worked_example_from_usage_text() {
        let (x0, y0, x1, y1) = parse_rect("1,0,3,2").unwrap();
        let m = RegionMask::rect(4, x0, y0, x1, y1).unwrap();
        assert_eq!(m.indices(), &[1, 2, 5, 6]);
    }

    #[test]
    fn rect_errors() {
        assert!(parse_rect("1,2,3").is_err());
        assert!(parse_rect("2,0,2,4").unwrap_err().contains("empty"));
        assert!(parse_rect("0,0,-1,4").is_err());
    }

    #[test]
    fn index_lists() {
        assert_eq!(parse_indices("3, 0,1,8-10,9").unwrap(), vec![0, 1, 3, 8, 9, 10]);
        assert!(parse_indices("").is_err());
        assert!(parse_indices("4-2").is_err());
        assert!(parse_indices("a").is_err());
    }

    #[test]
    fn gridless_generators_need_indices() {
        let g = make_linear_identity(4, 6).unwrap();
        assert!(resolve(&g, Some("0,0,1,1"), None).unwrap_err().contains("--indices"));
        assert_eq!(resolve(&g, None, Some("0-2")).unwrap().len(), 3);
        assert!(resolve(&g, None, Some("6")).is_err());
    }
}
