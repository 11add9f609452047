//! Per-thread multiply-accumulate counter fed by every matrix product.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

pub fn get() -> u64 {
    MACS.with(Cell::get)
}

pub(crate) fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}
