/// Step decay: `base_lr · drop_factor^⌊epoch / drop_every⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub drop_every: u32,
    pub drop_factor: f64,
}

impl LrSchedule {
    /// Divide by ten every five epochs.
    pub fn tenfold_every_five(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            drop_every: 5,
            drop_factor: 0.1,
        }
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        let drops = epoch / self.drop_every.max(1);
        self.base_lr * self.drop_factor.powi(drops as i32)
    }
}
