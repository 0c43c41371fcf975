//! Bounded, order-preserving parallel map.
//!
//! Worker count is capped by the `CMT_THREADS` environment variable
//! (default: available parallelism). Results are merged in input order, so
//! output is identical regardless of thread count.

pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("CMT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = thread_cap().min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<U>> = Vec::with_capacity(items.len());
    slots.resize_with(items.len(), || None);
    let slots_ptr = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                let mut guard = slots_ptr.lock().unwrap();
                guard[i] = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
