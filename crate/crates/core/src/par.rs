//! Data-parallel helpers.
//!
//! With the `parallel` feature these dispatch to rayon when asked for
//! [`Parallelism::Parallel`]; otherwise, or without the feature, they run on
//! the calling thread. Output order always matches input order.

use crate::model::Parallelism;

/// True when this build can actually run in parallel.
pub const fn available() -> bool {
    cfg!(feature = "parallel")
}

pub fn map<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

pub fn for_each_mut<T, F>(mode: Parallelism, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        items.par_iter_mut().for_each(f);
        return;
    }
    let _ = mode;
    items.iter_mut().for_each(f);
}

/// Maps `f` over `items`, stopping at the first error in input order.
pub fn try_map<T, R, E, F>(mode: Parallelism, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(mode, items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let xs: Vec<u32> = (0..1000).collect();
        let seq = map(Parallelism::Sequential, &xs, |x| x * 3);
        let par = map(Parallelism::Parallel, &xs, |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 2997);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> = try_map(Parallelism::Parallel, &xs, |&x| {
            if x >= 3 {
                Err(x)
            } else {
                Ok(x)
            }
        });
        assert_eq!(r, Err(3));
    }

    #[test]
    fn for_each_mut_touches_every_item() {
        let mut xs = vec![1u64; 257];
        for_each_mut(Parallelism::Parallel, &mut xs, |x| *x += 1);
        assert!(xs.iter().all(|&x| x == 2));
    }
}
