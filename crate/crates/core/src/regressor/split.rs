use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded 8:1:1 split that never separates items of the same group.
///
/// Groups are shuffled and laid out back to back; each group goes to the
/// split where its first item would land under the ungrouped cut points
/// `floor(0.8 n)` and `floor(0.9 n)`. With singleton groups this is exactly
/// the ungrouped split; with larger groups the sizes are rounded to group
/// boundaries.
pub fn split_811<T, K, F>(items: Vec<T>, seed: u64, group_of: F) -> (Vec<T>, Vec<T>, Vec<T>)
where
    K: std::hash::Hash + Eq + Clone,
    F: Fn(&T) -> K,
{
    let n = items.len();
    let (cut1, cut2) = cut_points(n);

    let mut order: Vec<K> = Vec::new();
    let mut members: HashMap<K, Vec<T>> = HashMap::new();
    for item in items {
        let key = group_of(&item);
        members
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(item);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut offset = 0;
    for key in order {
        let group = members.remove(&key).expect("group recorded once");
        let size = group.len();
        let dest = if offset < cut1 {
            &mut train
        } else if offset < cut2 {
            &mut val
        } else {
            &mut test
        };
        dest.extend(group);
        offset += size;
    }
    (train, val, test)
}

/// Seeded 8:1:1 split of individual items.
pub fn split_811_ungrouped<T>(mut items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (cut1, cut2) = cut_points(items.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let test = items.split_off(cut2);
    let val = items.split_off(cut1);
    (items, val, test)
}

fn cut_points(n: usize) -> (usize, usize) {
    (n * 8 / 10, n * 9 / 10)
}
