use interlace::lattice::{
    boundary, closure, linf_distance, neighbors, outer_boundary, BoxIndex, LatticeBox, Point, PointSet,
};
use proptest::prelude::*;

fn point(d: usize) -> impl Strategy<Value = Point> {
    prop::collection::vec(-6i64..=6, d).prop_map(|c| Point::new(&c).unwrap())
}

fn set3() -> impl Strategy<Value = PointSet> {
    prop::collection::vec(point(3), 1..40).prop_map(|v| v.into_iter().collect())
}

#[test]
fn sphere_sizes() {
    for d in 3..=5 {
        for r in 1..4i64 {
            let b = LatticeBox::ball(d, r);
            let inner = (2 * r - 1).pow(d as u32) as usize;
            assert_eq!(b.sphere().len(), b.len() as usize - inner);
            assert_eq!(boundary(&b.to_set()), b.sphere());
        }
    }
}

proptest! {
    #[test]
    fn index_roundtrip(d in 3usize..=6, r in 0i64..3, k in any::<prop::sample::Index>()) {
        let b = LatticeBox::ball(d, r);
        let ix = BoxIndex::of_box(&b);
        prop_assert_eq!(ix.len() as u64, b.len());
        let i = k.index(ix.len());
        prop_assert_eq!(ix.index(&ix.point(i)), Some(i));
    }

    #[test]
    fn neighbour_relations(x in point(4)) {
        let nn = neighbors(&x, false);
        let star = neighbors(&x, true);
        prop_assert_eq!(nn.len(), 8);
        prop_assert_eq!(star.len(), 80);
        prop_assert!(nn.iter().all(|y| x.is_adjacent(y) && x.l1_dist(y) == 1));
        prop_assert!(star.iter().all(|y| x.is_star_adjacent(y) && x.linf_dist(y) == 1));
    }

    #[test]
    fn boundaries_are_consistent(s in set3()) {
        let inner = boundary(&s);
        let outer = outer_boundary(&s);
        prop_assert!(inner.is_subset(&s));
        prop_assert!(outer.is_disjoint(&s));
        prop_assert_eq!(closure(&s), s.union(&outer));
        prop_assert!(outer.iter().all(|y| neighbors(y, false).iter().any(|z| inner.contains(z))));
    }

    #[test]
    fn distance_is_symmetric(a in set3(), b in set3()) {
        let dab = linf_distance(&a, &b).unwrap();
        prop_assert_eq!(dab, linf_distance(&b, &a).unwrap());
        let brute = a.iter().flat_map(|x| b.iter().map(move |y| x.linf_dist(y))).min().unwrap();
        prop_assert_eq!(dab, brute);
    }
}
