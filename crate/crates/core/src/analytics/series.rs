use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::analytics::{distance_km, LabeledTuple, PersonTimeline};
use crate::error::{Error, Result};
use crate::taxonomy::ActivityType;

/// Start of the `width`-year bin holding `year`, bins anchored at `origin`.
pub fn bin_start(year: i32, origin: i32, width: i32) -> i32 {
    origin + (year - origin).div_euclid(width) * width
}

fn bin_range(year_min: i32, year_max: i32, width: i32) -> impl Iterator<Item = i32> {
    let first = bin_start(year_min, year_min, width);
    let last = bin_start(year_max, year_min, width);
    (first..=last).step_by(width.max(1) as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub bin_start: i32,
    pub matched: u64,
    pub total: u64,
    /// Absent for empty bins.
    pub ratio: Option<f64>,
}

/// Share of tuples whose type is in `types`, per bin over `[year_min, year_max]`.
pub fn type_ratio_series(
    tuples: &[LabeledTuple],
    types: &[ActivityType],
    year_min: i32,
    year_max: i32,
    width: i32,
) -> Vec<RatioPoint> {
    let mut counts: BTreeMap<i32, (u64, u64)> = BTreeMap::new();
    for t in tuples {
        let Some(y) = t.year else { continue };
        if y < year_min || y > year_max {
            continue;
        }
        let e = counts.entry(bin_start(y, year_min, width)).or_default();
        e.1 += 1;
        if types.contains(&t.activity) {
            e.0 += 1;
        }
    }
    bin_range(year_min, year_max, width)
        .map(|b| {
            let (matched, total) = counts.get(&b).copied().unwrap_or_default();
            RatioPoint {
                bin_start: b,
                matched,
                total,
                ratio: (total > 0).then(|| matched as f64 / total as f64),
            }
        })
        .collect()
}

/// Ratios of two aligned series over `[from, to]`, dropping bins empty in either.
pub fn paired_nonempty(a: &[RatioPoint], b: &[RatioPoint], from: i32, to: i32) -> (Vec<f64>, Vec<f64>) {
    let bmap: BTreeMap<i32, Option<f64>> = b.iter().map(|p| (p.bin_start, p.ratio)).collect();
    a.iter()
        .filter(|p| p.bin_start >= from && p.bin_start <= to)
        .filter_map(|p| Some((p.ratio?, (*bmap.get(&p.bin_start)?)?)))
        .unzip()
}

/// Pearson r with a two-sided p-value from Student's t on `n - 2` degrees of freedom.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::validation(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::validation(format!("need at least 3 pairs, got {n}")));
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::validation("correlation undefined for a constant series"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::validation(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureBin {
    pub bin_start: i32,
    /// Consecutive pairs starting in the home country.
    pub travels: u64,
    /// Of those, pairs ending abroad.
    pub departures: u64,
    pub ratio: Option<f64>,
    /// Departures per travel split by the destination activity; sums to `ratio`.
    pub by_type: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartureSeries {
    pub home_country: String,
    /// Column names of `by_type`: the top types then `Other`.
    pub types: Vec<String>,
    pub bins: Vec<DepartureBin>,
    /// Pairs with a missing country (or missing coordinates under a distance threshold).
    pub skipped: u64,
}

fn same_country(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// International-departure ratios of consecutive timeline pairs, binned by the year of
/// the later tuple. Pairs shorter than `min_travel_km` are not travels.
pub fn departure_ratio_series(
    timelines: &[PersonTimeline],
    home_country: &str,
    top_n: usize,
    min_travel_km: f64,
    year_min: i32,
    year_max: i32,
    width: i32,
) -> DepartureSeries {
    let mut freq: BTreeMap<ActivityType, u64> = BTreeMap::new();
    for t in timelines.iter().flat_map(|t| &t.tuples) {
        if !matches!(t.activity, ActivityType::Birth | ActivityType::Death) {
            *freq.entry(t.activity).or_default() += 1;
        }
    }
    let mut ranked: Vec<(ActivityType, u64)> = freq.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let top: Vec<ActivityType> = ranked.into_iter().take(top_n).map(|(t, _)| t).collect();
    let column = |a: ActivityType| top.iter().position(|&t| t == a).unwrap_or(top.len());

    let mut travels: BTreeMap<i32, u64> = BTreeMap::new();
    let mut departures: BTreeMap<i32, Vec<u64>> = BTreeMap::new();
    let mut skipped = 0;
    for tl in timelines {
        for pair in tl.tuples.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let (Some(ca), Some(cb)) = (a.country.as_deref(), b.country.as_deref()) else {
                skipped += 1;
                continue;
            };
            if !same_country(ca, home_country) {
                continue;
            }
            if min_travel_km > 0.0 {
                match (a.point(), b.point()) {
                    (Some(pa), Some(pb)) => {
                        if distance_km(pa, pb) < min_travel_km {
                            continue;
                        }
                    }
                    _ => {
                        skipped += 1;
                        continue;
                    }
                }
            }
            let Some(y) = b.year else { continue };
            if y < year_min || y > year_max {
                continue;
            }
            let bin = bin_start(y, year_min, width);
            *travels.entry(bin).or_default() += 1;
            if !same_country(cb, home_country) {
                departures.entry(bin).or_insert_with(|| vec![0; top.len() + 1])[column(b.activity)] += 1;
            }
        }
    }
    let bins = bin_range(year_min, year_max, width)
        .map(|bin| {
            let t = travels.get(&bin).copied().unwrap_or(0);
            let per_type = departures.get(&bin).cloned().unwrap_or_else(|| vec![0; top.len() + 1]);
            let d: u64 = per_type.iter().sum();
            DepartureBin {
                bin_start: bin,
                travels: t,
                departures: d,
                ratio: (t > 0).then(|| d as f64 / t as f64),
                by_type: per_type
                    .iter()
                    .map(|&c| if t > 0 { c as f64 / t as f64 } else { 0.0 })
                    .collect(),
            }
        })
        .collect();
    let mut types: Vec<String> = top.iter().map(|t| t.name().to_string()).collect();
    types.push("Other".into());
    DepartureSeries {
        home_country: home_country.to_string(),
        types,
        bins,
        skipped,
    }
}

/// Columns of the life-stage histogram; every other type counts as `Other`.
pub const STAGE_TYPES: [ActivityType; 5] = [
    ActivityType::Birth,
    ActivityType::Death,
    ActivityType::Education,
    ActivityType::Career,
    ActivityType::Movement,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeStages {
    pub width: u32,
    /// Age-group start to counts for Birth, Death, Education, Career, Movement, Other.
    pub groups: BTreeMap<u32, [u64; 6]>,
    /// Timelines without a dated Birth tuple.
    pub no_birth: u64,
    /// Tuples dated before the birth year.
    pub inconsistent: u64,
}

pub fn life_stage_histogram(timelines: &[PersonTimeline], width: u32) -> LifeStages {
    let mut out = LifeStages {
        width,
        groups: BTreeMap::new(),
        no_birth: 0,
        inconsistent: 0,
    };
    for tl in timelines {
        let birth = tl
            .tuples
            .iter()
            .find(|t| t.activity == ActivityType::Birth)
            .and_then(|t| t.year);
        let Some(birth) = birth else {
            out.no_birth += 1;
            continue;
        };
        for t in &tl.tuples {
            let Some(y) = t.year else { continue };
            let age = y - birth;
            if age < 0 {
                out.inconsistent += 1;
                continue;
            }
            let group = age as u32 / width * width;
            let col = STAGE_TYPES.iter().position(|&s| s == t.activity).unwrap_or(5);
            out.groups.entry(group).or_default()[col] += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub target: ActivityType,
    pub distances: Vec<f64>,
    pub mean: Option<f64>,
    /// `(lower_km, upper_km, count)`: `[0, 1)` then four log-spaced bins per decade.
    pub histogram: Vec<(f64, f64, u64)>,
    pub skipped: u64,
}

fn log_edges() -> Vec<f64> {
    let mut edges = vec![0.0];
    let mut k = 0;
    loop {
        let e = 10f64.powf(k as f64 / 4.0);
        edges.push(e);
        if e > 20_100.0 {
            break;
        }
        k += 1;
    }
    edges
}

/// Distance from the birthplace to every `target` activity.
pub fn birth_distance_distribution(timelines: &[PersonTimeline], target: ActivityType) -> DistanceDistribution {
    let mut distances = Vec::new();
    let mut skipped = 0;
    for tl in timelines {
        let birth = tl
            .tuples
            .iter()
            .find(|t| t.activity == ActivityType::Birth)
            .and_then(LabeledTuple::point);
        for t in tl.tuples.iter().filter(|t| t.activity == target) {
            match (birth, t.point()) {
                (Some(b), Some(p)) => distances.push(distance_km(b, p)),
                _ => skipped += 1,
            }
        }
    }
    let edges = log_edges();
    let mut histogram: Vec<(f64, f64, u64)> = edges.windows(2).map(|w| (w[0], w[1], 0)).collect();
    for &d in &distances {
        if let Some(bin) = histogram.iter_mut().find(|(lo, hi, _)| d >= *lo && d < *hi) {
            bin.2 += 1;
        }
    }
    let mean = (!distances.is_empty()).then(|| distances.iter().sum::<f64>() / distances.len() as f64);
    DistanceDistribution {
        target,
        distances,
        mean,
        histogram,
        skipped,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `bin_start,<name>...` with empty cells for empty bins.
pub fn ratios_csv(series: &[(String, Vec<RatioPoint>)]) -> String {
    let mut out = String::from("bin_start");
    for (name, _) in series {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    if let Some((_, first)) = series.first() {
        for (i, p) in first.iter().enumerate() {
            let _ = write!(out, "{}", p.bin_start);
            for (_, s) in series {
                let _ = write!(out, ",{}", opt(s[i].ratio));
            }
            out.push('\n');
        }
    }
    out
}

impl DepartureSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,travels,departures,ratio");
        for t in &self.types {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for b in &self.bins {
            let _ = write!(out, "{},{},{},{}", b.bin_start, b.travels, b.departures, opt(b.ratio));
            for v in &b.by_type {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

impl LifeStages {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("age_group,Birth,Death,Education,Career,Movement,Other\n");
        for (g, c) in &self.groups {
            let _ = writeln!(
                out,
                "{}-{},{},{},{},{},{},{}",
                g,
                g + self.width - 1,
                c[0],
                c[1],
                c[2],
                c[3],
                c[4],
                c[5]
            );
        }
        out
    }
}

impl DistanceDistribution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower_km,upper_km,count\n");
        for (lo, hi, c) in &self.histogram {
            let _ = writeln!(out, "{lo},{hi},{c}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::GeoPoint;

    fn t(person: &str, year: i32, activity: ActivityType, country: Option<&str>) -> LabeledTuple {
        LabeledTuple {
            person: person.into(),
            year: Some(year),
            time: year.to_string(),
            location: "X".into(),
            latitude: None,
            longitude: None,
            country: country.map(str::to_string),
            activity,
            source_sample_id: format!("{person}{year}"),
        }
    }

    fn tl(person: &str, tuples: Vec<LabeledTuple>) -> PersonTimeline {
        PersonTimeline {
            person: person.into(),
            tuples,
        }
    }

    #[test]
    fn bins() {
        assert_eq!(bin_start(1896, 1700, 5), 1895);
        assert_eq!(bin_start(1700, 1700, 5), 1700);
        assert_eq!(bin_start(1699, 1700, 5), 1695);
        assert_eq!(bin_range(1700, 2000, 5).count(), 61);
    }

    #[test]
    fn ratio_series_half_military() {
        let ts = vec![
            t("a", 1901, ActivityType::Military, None),
            t("b", 1902, ActivityType::Career, None),
            t("c", 1903, ActivityType::Military, None),
            t("d", 1904, ActivityType::Education, None),
        ];
        let s = type_ratio_series(&ts, &[ActivityType::Military], 1900, 1914, 5);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].ratio, Some(0.5));
        assert_eq!(s[1].ratio, None);
        assert!(s.iter().filter_map(|p| p.ratio).all(|r| (0.0..=1.0).contains(&r)));
    }

    #[test]
    fn pearson_fixtures() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &y).unwrap().0, -1.0);
        assert!(pearson(&x, &[1.0; 10]).is_err());
        assert!(pearson(&[1.0, 2.0], &[2.0, 1.0]).is_err());

        // covariance over standard deviations, computed separately
        let a = [1.0, 2.0, 4.0, 7.0, 11.0];
        let b = [2.0, 1.0, 5.0, 6.0, 9.0];
        let n = 5.0;
        let mean = |s: &[f64]| s.iter().sum::<f64>() / n;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let sd = |s: &[f64], m: f64| (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let want = cov / (sd(&a, ma) * sd(&b, mb));
        let (r, p) = pearson(&a, &b).unwrap();
        assert!((r - want).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.05);
    }

    #[test]
    fn pearson_p_value_against_table() {
        // r = 0.5 with n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.8257, two-sided p = 0.0979
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let dist = StudentsT::new(0.0, 1.0, 10.0).unwrap();
        let t = 0.5 * (10.0f64 / 0.75).sqrt();
        let p = 2.0 * (1.0 - dist.cdf(t));
        assert!((p - 0.0979).abs() < 1e-3);
        assert!(pearson(&x, &x).unwrap().1 == 0.0);
    }

    #[test]
    fn departures_two_person_fixture() {
        let a = tl(
            "A",
            vec![
                t("A", 1930, ActivityType::Career, Some("Germany")),
                t("A", 1933, ActivityType::Movement, Some("France")),
            ],
        );
        let b = tl(
            "B",
            vec![
                t("B", 1931, ActivityType::Career, Some("Germany")),
                t("B", 1934, ActivityType::Career, Some("Germany")),
            ],
        );
        let s = departure_ratio_series(&[a, b], "Germany", 8, 0.0, 1900, 1949, 5);
        let bin = s.bins.iter().find(|b| b.bin_start == 1930).unwrap();
        assert_eq!((bin.travels, bin.departures), (2, 1));
        assert_eq!(bin.ratio, Some(0.5));
        assert!((bin.by_type.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        assert_eq!(s.types.last().unwrap(), "Other");
    }

    #[test]
    fn domestic_timeline_has_zero_ratio_and_missing_country_is_skipped() {
        let d = tl(
            "D",
            vec![
                t("D", 1950, ActivityType::Birth, Some("Germany")),
                t("D", 1951, ActivityType::Education, Some("Germany")),
                t("D", 1952, ActivityType::Career, None),
            ],
        );
        let s = departure_ratio_series(&[d], "Germany", 8, 0.0, 1900, 1999, 5);
        let bin = s.bins.iter().find(|b| b.bin_start == 1950).unwrap();
        assert_eq!(bin.ratio, Some(0.0));
        assert_eq!(s.skipped, 1);
        assert!(!s.types.contains(&"Birth".to_string()));
    }

    #[test]
    fn life_stages() {
        let p = tl(
            "P",
            vec![
                t("P", 1950, ActivityType::Birth, None),
                t("P", 1970, ActivityType::Education, None),
                t("P", 1945, ActivityType::Other, None),
                t("P", 1980, ActivityType::Marriage, None),
            ],
        );
        let h = life_stage_histogram(&[p, tl("Q", vec![t("Q", 1900, ActivityType::Career, None)])], 10);
        assert_eq!(h.groups[&20][2], 1);
        assert_eq!(h.groups[&30][5], 1);
        assert_eq!(h.groups[&0][0], 1);
        assert_eq!((h.no_birth, h.inconsistent), (1, 1));
        assert!(h.to_csv().contains("20-29,0,0,1,0,0,0"));
    }

    #[test]
    fn birth_distances() {
        let mut born = t("P", 1900, ActivityType::Birth, None);
        born.latitude = Some(0.0);
        born.longitude = Some(0.0);
        let mut e1 = t("P", 1920, ActivityType::Education, None);
        e1.latitude = Some(0.0);
        e1.longitude = Some(0.0);
        let d = birth_distance_distribution(&[tl("P", vec![born.clone(), e1])], ActivityType::Education);
        assert_eq!(d.mean, Some(0.0));
        assert_eq!(d.histogram[0].2, 1);

        // two activities at 100 km and 300 km along the equator
        let deg = |km: f64| km / (std::f64::consts::PI * super::super::EARTH_RADIUS_KM / 180.0);
        let mut c1 = t("P", 1930, ActivityType::Career, None);
        c1.latitude = Some(0.0);
        c1.longitude = Some(deg(100.0));
        let mut c2 = t("P", 1940, ActivityType::Career, None);
        c2.latitude = Some(0.0);
        c2.longitude = Some(deg(300.0));
        let missing = t("P", 1950, ActivityType::Career, None);
        let d = birth_distance_distribution(&[tl("P", vec![born, c1, c2, missing])], ActivityType::Career);
        assert!((d.mean.unwrap() - 200.0).abs() < 1e-6);
        assert_eq!(d.skipped, 1);
        assert_eq!(d.histogram.iter().map(|h| h.2).sum::<u64>(), 2);
        assert!(GeoPoint::new(0.0, deg(300.0)).is_ok());
    }

    #[test]
    fn csv_outputs() {
        let ts = vec![t("a", 1901, ActivityType::Military, None)];
        let s = type_ratio_series(&ts, &[ActivityType::Military], 1900, 1909, 5);
        assert_eq!(ratios_csv(&[("military".into(), s)]), "bin_start,military\n1900,1\n1905,\n");
    }
}
