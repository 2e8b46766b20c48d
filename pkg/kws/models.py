from django.db import models


class TimestampedModel(models.Model):
    """Abstract model to add created_at and updated_at fields to other models."""
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        abstract = True


def _snr_fields(snr):
    """Row label and finite dB value (None for clean or SNR-less rows)."""
    if snr is None:
        return 'all', None
    return snr.label, None if snr.is_clean else snr.snr_db


class ExperimentRun(TimestampedModel):
    """One pipeline run; the manifest is the same one written next to its artifacts."""
    COMMAND_CHOICES = [
        ('end_to_end', 'End-to-end evaluation'),
        ('gap_analysis', 'Threshold gap analysis'),
    ]

    command = models.CharField(max_length=20, choices=COMMAND_CHOICES)
    manifest = models.JSONField(default=dict)
    seed = models.IntegerField(default=0)
    version = models.CharField(max_length=20)
    output_dir = models.CharField(max_length=500)

    def __str__(self):
        return f"{self.get_command_display()} #{self.pk} ({self.output_dir})"

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"


class EvaluationRecord(TimestampedModel):
    SPLIT_CHOICES = [
        ('validation', 'Validation'),
        ('test', 'Test'),
    ]

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='evaluations')
    trial = models.PositiveIntegerField(default=0)
    snr = models.CharField(max_length=20)
    snr_db = models.FloatField(null=True, blank=True)
    mode = models.CharField(max_length=20)
    split = models.CharField(max_length=20, choices=SPLIT_CHOICES)
    threshold = models.JSONField(default=dict)
    micro_f = models.FloatField()
    macro_f = models.FloatField()
    tp = models.PositiveIntegerField(default=0)
    fp = models.PositiveIntegerField(default=0)
    fn = models.PositiveIntegerField(default=0)

    @classmethod
    def from_report(cls, run, trial, snr, mode, split, report):
        label, value = _snr_fields(snr)
        totals = report.totals
        return cls(
            run=run,
            trial=trial,
            snr=label,
            snr_db=value,
            mode=mode,
            split=split,
            threshold=report.threshold.to_dict() if report.threshold else {},
            micro_f=report.micro_f,
            macro_f=report.macro_f,
            tp=totals.tp,
            fp=totals.fp,
            fn=totals.fn,
        )

    def __str__(self):
        return f"{self.split} {self.mode} @ {self.snr}: F={self.micro_f:.3f}"

    class Meta:
        ordering = ['run', 'trial', 'snr_db', 'mode', 'split']
        unique_together = ('run', 'trial', 'snr', 'mode', 'split')
        verbose_name = "Evaluation Record"
        verbose_name_plural = "Evaluation Records"


class ThresholdGapRecord(TimestampedModel):
    """Validation-estimated against test-optimal threshold for one cell."""
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='gaps')
    trial = models.PositiveIntegerField(default=0)
    snr = models.CharField(max_length=20)
    snr_db = models.FloatField(null=True, blank=True)
    mode = models.CharField(max_length=20)
    estimated_threshold = models.FloatField()
    oracle_threshold = models.FloatField()
    estimated_f = models.FloatField()
    oracle_f = models.FloatField()

    @property
    def delta_threshold(self):
        return self.oracle_threshold - self.estimated_threshold

    @property
    def delta_f(self):
        return self.oracle_f - self.estimated_f

    @classmethod
    def from_gap(cls, run, trial, snr, mode, gap):
        label, value = _snr_fields(snr)
        return cls(
            run=run,
            trial=trial,
            snr=label,
            snr_db=value,
            mode=mode,
            estimated_threshold=gap.estimated_threshold,
            oracle_threshold=gap.oracle_threshold,
            estimated_f=gap.estimated_f,
            oracle_f=gap.oracle_f,
        )

    def __str__(self):
        return f"{self.mode} @ {self.snr}: dF={self.delta_f:.3f}"

    class Meta:
        ordering = ['run', 'trial', 'snr_db', 'mode']
        unique_together = ('run', 'trial', 'snr', 'mode')
        verbose_name = "Threshold Gap Record"
        verbose_name_plural = "Threshold Gap Records"
