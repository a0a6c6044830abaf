//! Time sources. Query timing takes a clock parameter so tests and
//! reproducible reports can substitute a virtual one.

use core::cell::Cell;

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> f64 {
        (**self).now()
    }
}

/// Deterministic clock that advances by a fixed tick on every read.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    tick: f64,
    current: Cell<f64>,
}

impl VirtualClock {
    pub fn new(tick: f64) -> Self {
        Self {
            tick,
            current: Cell::new(0.0),
        }
    }

    pub fn advance(&self, dt: f64) {
        self.current.set(self.current.get() + dt);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        let t = self.current.get();
        self.current.set(t + self.tick);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_ticks_per_read() {
        let c = VirtualClock::new(0.5);
        assert_eq!(c.now(), 0.0);
        assert_eq!(c.now(), 0.5);
        c.advance(1.0);
        assert_eq!(c.now(), 2.0);
    }
}
