mod common;

use std::f64::consts::PI;

use movesel::error::Error;
use movesel::geodata::*;
use movesel::numcore::Rng;
use movesel::track::*;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

fn random_grid(ncols: usize, nrows: usize, rng: &mut Rng) -> RasterGrid {
    let values = (0..ncols * nrows)
        .map(|_| {
            if rng.uniform() < 0.1 {
                -9999.0
            } else {
                (rng.uniform() * 1e6).round() / 1e3
            }
        })
        .collect();
    RasterGrid::new(ncols, nrows, 1234.5, -300.0, 25.0, -9999.0, values).unwrap()
}

#[test]
fn extraction_matches_rectangle_scan() {
    let mut rng = Rng::new(1);
    let g = random_grid(37, 23, &mut rng);
    let stack = CovariateStack::new(vec![("v".into(), g.clone())]).unwrap();
    for _ in 0..1000 {
        let p = Point::new(
            rng.uniform_range(g.xll(), g.xmax()),
            rng.uniform_range(g.yll(), g.ymax()),
        );
        let mut hits = Vec::new();
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let x0 = g.xll() + c as f64 * g.cellsize();
                let y1 = g.ymax() - r as f64 * g.cellsize();
                if p.x >= x0 && p.x < x0 + g.cellsize() && p.y <= y1 && p.y > y1 - g.cellsize() {
                    hits.push(g.get(r, c));
                }
            }
        }
        assert_eq!(hits.len(), 1, "{p:?}");
        let expect = if g.is_nodata(hits[0]) { None } else { Some(hits[0]) };
        assert_eq!(stack.extract(p).unwrap(), vec![expect]);
    }
    let outside = Point::new(g.xmax() + 1e-3, g.yll() + 1.0);
    assert!(matches!(stack.extract(outside), Err(Error::OutOfExtent { .. })));
}

/// Hull by brute force: the directed edges (i, j) with every other point
/// strictly to the left. The shoelace sum over those edges is the area.
fn brute_hull_area(pts: &[Point]) -> f64 {
    let mut twice = 0.0;
    for (i, a) in pts.iter().enumerate() {
        for (j, b) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let left = pts
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i && *k != j)
                .all(|(_, p)| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) > 0.0);
            if left {
                twice += a.x * b.y - b.x * a.y;
            }
        }
    }
    twice / 2.0
}

#[test]
fn hull_matches_brute_force() {
    let mut rng = Rng::new(2);
    for _ in 0..5 {
        let pts: Vec<Point> = (0..200)
            .map(|_| Point::new(rng.uniform_range(-50.0, 80.0), rng.uniform_range(10.0, 30.0)))
            .collect();
        let hull = convex_hull(&pts).unwrap();
        assert!(pts.iter().all(|p| point_in_polygon(&hull, *p)));
        let oracle = brute_hull_area(&pts);
        assert!(
            (hull.area() - oracle).abs() < 1e-9 * oracle,
            "{} vs {oracle}",
            hull.area()
        );
    }
}

fn winding_number(poly: &[Point], p: Point) -> i32 {
    let mut total = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let t = (a.y - p.y).atan2(a.x - p.x);
        let u = (b.y - p.y).atan2(b.x - p.x);
        let mut d = u - t;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d <= -PI {
            d += 2.0 * PI;
        }
        total += d;
    }
    (total / (2.0 * PI)).round() as i32
}

#[test]
fn containment_matches_winding_number() {
    let mut rng = Rng::new(3);
    // star-shaped, non-convex ring
    let ring: Vec<Point> = (0..24)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 24.0;
            let r = if i % 2 == 0 {
                10.0
            } else {
                rng.uniform_range(2.0, 6.0)
            };
            Point::new(r * a.cos(), r * a.sin())
        })
        .collect();
    let poly = Polygon::new(ring.clone()).unwrap();
    for _ in 0..1000 {
        let p = Point::new(rng.uniform_range(-12.0, 12.0), rng.uniform_range(-12.0, 12.0));
        assert_eq!(point_in_polygon(&poly, p), winding_number(&ring, p) != 0, "{p:?}");
    }
    assert!(point_in_polygon(&poly, ring[0]));
}

#[test]
fn uniform_sampling_in_square_and_triangle() {
    let mut rng = Rng::new(4);
    let sq = Polygon::new(vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.0, 1.0),
    ])
    .unwrap();
    let pts = sample_uniform_in_polygon(&sq, 100_000, &mut rng);
    let left = pts.iter().filter(|p| p.x < 0.5).count() as f64 / 1e5;
    assert!((left - 0.5).abs() < 0.01);

    let tri = Polygon::new(vec![
        Point::new(0.0, 0.0),
        Point::new(3.0, 0.0),
        Point::new(0.5, 2.0),
    ])
    .unwrap();
    let (pts, proposals) = sample_uniform_in_polygon_counted(&tri, 100_000, &mut rng);
    assert!(pts.iter().all(|p| point_in_polygon(&tri, *p)));
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 1e5;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 1e5;
    let c = tri.centroid();
    assert!((cx - c.x).abs() < 0.01 && (cy - c.y).abs() < 0.01);
    let (x0, y0, x1, y1) = tri.bbox();
    let ratio = 1e5 / proposals as f64;
    assert!(
        (ratio - tri.area() / ((x1 - x0) * (y1 - y0))).abs() < 0.01,
        "{ratio}"
    );
}

#[test]
fn raster_file_round_trip() {
    let mut rng = Rng::new(5);
    let g = random_grid(50, 40, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.asc");
    write_ascii_grid(&g, &path).unwrap();
    let back = read_ascii_grid(&path).unwrap();
    assert_eq!(back, g);
    let again = dir.path().join("h.asc");
    write_ascii_grid(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn malformed_raster_reports_line() {
    let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n";
    match RasterGrid::parse_ascii(text, std::path::Path::new("bad.asc")) {
        Err(Error::ParseError { line, .. }) => assert!(line >= 7, "line {line}"),
        other => panic!("{other:?}"),
    }
}

fn regular_track(n: usize, interval: i64, rng: &mut Rng) -> Track {
    let mut p = Point::new(0.0, 0.0);
    let coords = (0..n)
        .map(|_| {
            let q = p;
            p = p.step(rng.uniform_range(0.0, 100.0), rng.uniform_range(-PI, PI));
            q
        })
        .collect();
    Track::new("a", (0..n as i64).map(|i| i * interval).collect(), coords).unwrap()
}

#[test]
fn thinning_140_by_10() {
    let t = regular_track(140, 86_400, &mut Rng::new(6));
    let b = validate_regular(&t, 86_400, 0.1).unwrap();
    assert_eq!(b.bursts.len(), 1);
    assert_eq!(b.bursts[0].len(), 140);
    assert_eq!(thin(&t, 10).unwrap().len(), 14);
    assert_eq!(thin(&t, 1).unwrap(), t);
    assert_eq!(thin(&t, 500).unwrap().len(), 1);
}

#[test]
fn interpolation_examples() {
    let t = Track::new("a", vec![0, 2], vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0)]).unwrap();
    let r = interpolate_regular(&t, 1, 10).unwrap();
    assert_eq!(r.times(), &[0, 1, 2]);
    assert_eq!(r.coords()[1], Point::new(1.0, 0.0));

    let reg = regular_track(20, 3600, &mut Rng::new(7));
    assert_eq!(interpolate_regular(&reg, 3600, 7200).unwrap(), reg);

    let day = 86_400;
    let gap = Track::new(
        "g",
        vec![0, day, 11 * day, 12 * day],
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(3.0, 0.0),
        ],
    )
    .unwrap();
    let r = interpolate_regular(&gap, day, 3 * day).unwrap();
    assert_eq!(r.times(), &[0, day, 11 * day, 12 * day]);
    assert_eq!(validate_regular(&r, day, 0.1).unwrap().bursts.len(), 2);
}

#[test]
fn step_geometry_examples() {
    let none = CovariateStack::empty();
    let t = Track::new("a", vec![0, 1], vec![Point::new(0.0, 0.0), Point::new(3.0, 4.0)]).unwrap();
    let s = to_steps(&[t], &none).unwrap();
    assert_eq!(s.len(), 1);
    assert!((s.steps[0].length - 5.0).abs() < 1e-12);
    let pts = vec![
        Point::new(0.0, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(1.0, 2.0),
    ];
    let t = Track::new("a", vec![0, 1, 2, 3], pts).unwrap();
    let s = to_steps(&[t], &none).unwrap();
    assert!((s.steps[1].turn.unwrap() - PI / 2.0).abs() < 1e-12);
    assert!(s.steps[2].turn.unwrap().abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thinning_composes(n in 2usize..300, a in 1usize..8, b in 1usize..8, seed in 0u64..1000) {
        let t = regular_track(n, 60, &mut Rng::new(seed));
        prop_assert_eq!(thin(&thin(&t, a).unwrap(), b).unwrap(), thin(&t, a * b).unwrap());
    }

    #[test]
    fn steps_cover_the_path(n in 2usize..200, seed in 0u64..1000) {
        let t = regular_track(n, 60, &mut Rng::new(seed));
        let s = to_steps(std::slice::from_ref(&t), &CovariateStack::empty()).unwrap();
        prop_assert_eq!(s.len(), n - 1);
        let path: f64 = t.coords().windows(2).map(|w| w[0].dist(w[1])).sum();
        let total: f64 = s.steps.iter().map(|s| s.length).sum();
        prop_assert!((total - path).abs() <= 1e-9 * path.max(1e-300));
        prop_assert!(s.steps[0].turn.is_none());
        for st in &s.steps {
            if let Some(th) = st.turn {
                prop_assert!(th > -PI && th <= PI);
            }
        }
    }

    #[test]
    fn regular_bursts_give_regular_steps(
        n in 3usize..150,
        tol in 0.0f64..0.45,
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed);
        let interval = 3600i64;
        let mut t = 0i64;
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            times.push(t);
            t += match rng.index(10) {
                0 => interval * (2 + rng.index(5) as i64),
                1 => interval / 2,
                _ => interval + (rng.uniform_range(-0.5, 0.5) * interval as f64) as i64,
            }
            .max(1);
        }
        let coords = (0..n).map(|i| Point::new(i as f64, (i * i) as f64 % 7.0)).collect();
        let track = Track::new("a", times, coords).unwrap();
        let b = validate_regular(&track, interval, tol).unwrap();
        let kept: usize = b.bursts.iter().map(Track::len).sum();
        prop_assert_eq!(kept + b.dropped_singletons, n);
        let steps = to_steps(&b.bursts, &CovariateStack::empty()).unwrap();
        for s in &steps.steps {
            prop_assert!(((s.interval() - interval) as f64).abs() <= tol * interval as f64);
        }
        for burst in steps.bursts() {
            prop_assert!(burst[0].turn.is_none());
        }
    }

    #[test]
    fn hull_is_idempotent_and_contains_inputs(seed in 0u64..10_000, n in 3usize..80) {
        let mut rng = Rng::new(seed);
        let pts: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.uniform_range(-1e3, 1e3), rng.uniform_range(-1e3, 1e3)))
            .collect();
        let h = convex_hull(&pts).unwrap();
        let h2 = convex_hull(h.vertices()).unwrap();
        let mut a = h.vertices().to_vec();
        let mut b = h2.vertices().to_vec();
        let key = |p: &Point| (p.x.to_bits(), p.y.to_bits());
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a, b);
        let v = h.vertices();
        for p in &pts {
            for i in 0..v.len() {
                let (s, e) = (v[i], v[(i + 1) % v.len()]);
                let len = s.dist(e);
                let signed = ((e.x - s.x) * (p.y - s.y) - (e.y - s.y) * (p.x - s.x)) / len;
                prop_assert!(signed >= -1e-9);
            }
        }
    }

    #[test]
    fn constant_grid_extracts_constant(v in -1e6f64..1e6, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let g = RasterGrid::new(7, 5, -10.0, 20.0, 3.0, -9999.0, vec![v; 35]).unwrap();
        let p = Point::new(g.xll() + fx * (g.xmax() - g.xll()), g.yll() + fy * (g.ymax() - g.yll()));
        let s = CovariateStack::new(vec![("c".into(), g)]).unwrap();
        prop_assert_eq!(s.extract(p).unwrap(), vec![Some(v)]);
    }

    #[test]
    fn acceptance_ratio_is_area_fraction(seed in 0u64..100) {
        let mut rng = Rng::new(seed);
        let pts: Vec<Point> = (0..12)
            .map(|_| Point::new(rng.uniform_range(0.0, 4.0), rng.uniform_range(0.0, 1.0)))
            .collect();
        let h = convex_hull(&pts).unwrap();
        let (_, proposals) = sample_uniform_in_polygon_counted(&h, 100_000, &mut rng);
        let (x0, y0, x1, y1) = h.bbox();
        let expect = h.area() / ((x1 - x0) * (y1 - y0));
        prop_assert!((1e5 / proposals as f64 - expect).abs() < 0.01);
    }
}
