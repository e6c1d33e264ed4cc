use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

/// First failure of an [`ordered_map`] run.
#[derive(Debug)]
pub(crate) struct Failed<E> {
    /// Input index of the earliest failing element.
    pub index: usize,
    /// Elements that finished successfully before workers stopped.
    pub completed: usize,
    pub error: E,
}

/// Applies `f` to every element on up to `workers` threads and returns the
/// results in input order. After the first error no new elements start.
pub(crate) fn ordered_map<T, R, E, F>(
    items: &[T],
    workers: usize,
    f: F,
) -> Result<Vec<R>, Failed<E>>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let failure: Mutex<Option<(usize, E)>> = Mutex::new(None);

    thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    return;
                }
                match f(&items[i]) {
                    Ok(r) => slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        let mut slot = failure.lock().unwrap_or_else(|e| e.into_inner());
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                        return;
                    }
                }
            });
        }
    });

    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    if let Some((index, error)) = failure.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(Failed {
            index,
            completed: slots.iter().filter(|r| r.is_some()).count(),
            error,
        });
    }
    Ok(slots
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}
