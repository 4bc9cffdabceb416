use bicmppi::environment::{format_map, generate_map, generate_map_with_obstacles, load_map, parse_map, save_map};
use bicmppi::{MapSpec, OccupancyGrid};
use proptest::prelude::*;

fn random_grid(width: usize, height: usize, bits: &[bool]) -> OccupancyGrid {
    OccupancyGrid::new(width, height, 0.1, [0.0, 0.0], bits[..width * height].to_vec()).unwrap()
}

fn occupied(g: &OccupancyGrid) -> Vec<(usize, usize)> {
    (0..g.height())
        .flat_map(|r| (0..g.width()).map(move |c| (c, r)))
        .filter(|&(c, r)| g.is_occupied(c, r))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inflation_is_monotone_and_zero_is_identity(
        width in 1usize..20,
        height in 1usize..20,
        bits in prop::collection::vec(prop::bool::weighted(0.08), 400),
        cells in 0u32..4,
    ) {
        let g = random_grid(width, height, &bits);
        let r = cells as f64 * 0.1;
        let inflated = g.inflate(r);
        for (c, row) in occupied(&g) {
            prop_assert!(inflated.is_occupied(c, row));
        }
        prop_assert_eq!(inflated.inflate(0.0), inflated.clone());
        // Every new cell lies within r of an original occupied cell.
        for (c, row) in occupied(&inflated) {
            let [x, y] = inflated.cell_center(c, row);
            let near = occupied(&g).into_iter().any(|(c2, r2)| {
                let [x2, y2] = g.cell_center(c2, r2);
                (x - x2).hypot(y - y2) <= r + 1e-9
            });
            prop_assert!(near);
        }
    }

    #[test]
    fn text_format_round_trips(
        width in 1usize..20,
        height in 1usize..20,
        bits in prop::collection::vec(prop::bool::ANY, 400),
        ox in -5.0f64..5.0,
        oy in -5.0f64..5.0,
    ) {
        let g = OccupancyGrid::new(width, height, 0.05, [ox, oy], bits[..width * height].to_vec()).unwrap();
        prop_assert_eq!(parse_map(&format_map(&g)).unwrap(), g);
    }

    #[test]
    fn generated_maps_are_deterministic_and_match_obstacle_discs(seed in any::<u64>()) {
        let spec = MapSpec { rng_seed: seed, ..MapSpec::default() };
        let a = generate_map_with_obstacles(&spec).unwrap();
        prop_assert_eq!(&generate_map(&spec).unwrap(), &a.grid);

        let reach = spec.obstacle_radius + spec.inflation_radius;
        let slack = spec.resolution * std::f64::consts::SQRT_2;
        let [_, bottom] = spec.base_offset();
        let top = spec.extended_size[1] - spec.free_margins[1];
        for row in 0..a.grid.height() {
            for col in 0..a.grid.width() {
                let [x, y] = a.grid.cell_center(col, row);
                if y < bottom || y > top {
                    prop_assert!(!a.grid.is_occupied(col, row));
                    continue;
                }
                let nearest = a.obstacles.iter().map(|o| (x - o[0]).hypot(y - o[1])).fold(f64::INFINITY, f64::min);
                if nearest < reach - slack {
                    prop_assert!(a.grid.is_colliding(&[x, y]), "({x}, {y}) is {nearest} from an obstacle");
                }
                if nearest > reach + slack {
                    prop_assert!(!a.grid.is_colliding(&[x, y]), "({x}, {y}) is {nearest} from an obstacle");
                }
            }
        }
        prop_assert!(a.grid.has_vertical_passage(bottom, top));
    }
}

#[test]
fn save_and_load_agree() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_map(&MapSpec { rng_seed: 4, ..MapSpec::default() }).unwrap();
    let path = dir.path().join("m.map");
    save_map(&g, &path).unwrap();
    assert_eq!(load_map(&path).unwrap(), g);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("30 50 0.1 0 0\n"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn malformed_maps_name_the_line() {
    let err = parse_map("2 2 0.1 0 0\n01\n0x\n").unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    assert!(parse_map("2 2 0.1 0\n01\n00\n").is_err());
    assert!(parse_map("2 2 0.1 0 0\n01\n").is_err());
}

#[test]
fn open_ends_only_free_the_short_edges() {
    let g = OccupancyGrid::free_arena([3.0, 5.0], 0.1).unwrap();
    assert!(!g.is_colliding_open_ends(&[1.5, 5.4]));
    assert!(!g.is_colliding_open_ends(&[1.5, -0.3]));
    assert!(g.is_colliding_open_ends(&[3.2, 2.0]));
    assert!(g.is_colliding(&[1.5, 5.4]));
    assert!(!g.is_colliding(&[1.5, 5.0]));
}
