"""Signal preprocessing: Chebyshev type-II filtering, resampling,
short-time Fourier spectrograms for speech, band filter banks for EEG, and
decision-window segmentation.

Speech path: 8 kHz lowpass, resample to 16 kHz, slice into decision
windows, then log-magnitude STFT per window (32 ms Hann, 12 ms hop). EEG
path: select ten electrodes, band-pass into the five canonical bands,
resample each band to 128 Hz, slice the same windows. Two-second windows
are repeat-padded along time to presentation length before the STFT so
the encoder geometry is identical across window settings.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal as sig

from .errors import ChannelError, ContractError, FilterDesignError

EEG_CHANNELS = ("F7", "F3", "F4", "F8", "T7", "C3", "Cz", "C4", "T8", "Pz")
EEG_BANDS_HZ = ((1.0, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 30.0), (30.0, 50.0))
EEG_FEATURE_RATE = 128
SPEECH_RATE = 16000
SPEECH_LOWPASS_HZ = 8000.0
STFT_WINDOW_MS = 32
STFT_HOP_MS = 12

# stopband placement relative to the passband edges; the extra decibel of
# design attenuation keeps the response strictly below the spec point
LOWPASS_STOP_RATIO = 1.5
BANDPASS_LOW_STOP_RATIO = 0.5
BANDPASS_HIGH_STOP_RATIO = 1.6
DESIGN_MARGIN_DB = 1.0


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ContractError("audio: sample_rate must be positive")

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


@dataclass
class EegRecording:
    data: np.ndarray  # channels x time
    sample_rate: float
    channel_names: tuple

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.channel_names = tuple(self.channel_names)
        if len(set(self.channel_names)) != len(self.channel_names):
            raise ContractError("eeg: channel names must be unique")
        if self.data.shape[0] != len(self.channel_names):
            raise ContractError("eeg: data rows must match channel names")


@dataclass
class IirFilter:
    """Second-order-section cascade with its design metadata."""

    sos: np.ndarray
    kind: str
    order: int
    edges_hz: tuple
    stopband_atten_db: float
    sample_rate: float

    def pole_radii(self):
        radii = []
        for section in self.sos:
            poles = np.roots(section[3:])
            radii.extend(abs(p) for p in poles)
        return np.asarray(radii)

    def is_stable(self):
        return bool(np.all(self.pole_radii() < 1.0))

    def magnitude_db(self, freqs_hz):
        w, h = sig.sosfreqz(self.sos, worN=np.asarray(freqs_hz, dtype=float),
                            fs=self.sample_rate)
        return 20.0 * np.log10(np.maximum(np.abs(h), 1e-300))


@dataclass
class SpectrogramFeature:
    values: np.ndarray  # frequency bins x frames, log magnitude
    window_ms: int = STFT_WINDOW_MS
    hop_ms: int = STFT_HOP_MS

    @property
    def num_bins(self):
        return self.values.shape[0]

    @property
    def num_frames(self):
        return self.values.shape[1]


@dataclass
class FilterBankFeature:
    values: np.ndarray  # bands x channels x time
    sample_rate: float = EEG_FEATURE_RATE
    band_edges_hz: tuple = EEG_BANDS_HZ
    channel_names: tuple = EEG_CHANNELS


@dataclass
class DecisionWindow:
    eeg: np.ndarray                 # bands x channels x time slice
    speech1: SpectrogramFeature
    speech2: SpectrogramFeature
    label: int
    start_s: float
    window_s: float
    trial_id: str = ""


def design_cheby2(kind, order, edges_hz, stopband_atten_db, sample_rate):
    """Chebyshev type-II design with the stopband edges placed around the
    requested passband: 1.5x the cutoff for a lowpass, [low/2, 1.6*high]
    for a bandpass (clipped below Nyquist)."""
    if order < 2 or order % 2 != 0:
        raise ContractError("filter design: order must be even and >= 2")
    nyquist = sample_rate / 2.0
    edges = tuple(float(e) for e in np.atleast_1d(edges_hz))
    if any(e <= 0 or e >= nyquist for e in edges):
        raise FilterDesignError(
            f"filter design: edges {edges} must lie inside (0, {nyquist}) Hz")
    rs = stopband_atten_db + DESIGN_MARGIN_DB

    if kind == "lowpass":
        (cutoff,) = edges
        ws = min(LOWPASS_STOP_RATIO * cutoff, 0.99 * nyquist)
        sos = sig.cheby2(order, rs, ws, btype="lowpass", fs=sample_rate, output="sos")
    elif kind == "bandpass":
        low, high = edges
        if low >= high:
            raise FilterDesignError("filter design: bandpass needs low < high")
        ws = (BANDPASS_LOW_STOP_RATIO * low,
              min(BANDPASS_HIGH_STOP_RATIO * high, 0.98 * nyquist))
        sos = sig.cheby2(order, rs, ws, btype="bandpass", fs=sample_rate, output="sos")
    else:
        raise ContractError(f"filter design: unknown kind {kind!r}")

    filt = IirFilter(sos=sos, kind=kind, order=order, edges_hz=edges,
                     stopband_atten_db=stopband_atten_db, sample_rate=sample_rate)
    if not filt.is_stable():
        raise FilterDesignError(
            f"filter design: unstable result for {kind} {edges} at {sample_rate} Hz")
    return filt


def filter_apply(filt, x):
    """Causal second-order-section filtering along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    return sig.sosfilt(filt.sos, x, axis=-1)


def resample(audio, target_rate):
    """Band-limited rational-ratio resampling; output length is
    round(n * target / source)."""
    if target_rate <= 0:
        raise ContractError("resample: target rate must be positive")
    if target_rate == audio.sample_rate:
        return AudioSignal(audio.samples.copy(), target_rate)
    from fractions import Fraction
    ratio = Fraction(target_rate).limit_denominator(10 ** 6) / \
        Fraction(audio.sample_rate).limit_denominator(10 ** 6)
    out = sig.resample_poly(audio.samples, ratio.numerator, ratio.denominator)
    want = int(round(len(audio.samples) * target_rate / audio.sample_rate))
    if len(out) > want:
        out = out[:want]
    elif len(out) < want:
        out = np.pad(out, (0, want - len(out)), mode="edge")
    return AudioSignal(out, target_rate)


def stft_log_magnitude(audio):
    """Log(1 + magnitude) spectrogram with a periodic Hann window.

    At 16 kHz the 32 ms window is 512 samples, the 12 ms hop 192 samples,
    giving 257 bins and floor((n - 512) / 192) + 1 frames.
    """
    window = int(round(STFT_WINDOW_MS * audio.sample_rate / 1000.0))
    hop = int(round(STFT_HOP_MS * audio.sample_rate / 1000.0))
    x = audio.samples
    if len(x) < window:
        raise ContractError(
            f"stft: signal of {len(x)} samples shorter than one {window}-sample window")
    n_frames = (len(x) - window) // hop + 1
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]
    spectrum = np.fft.rfft(frames * hann, axis=1)
    values = np.log1p(np.abs(spectrum)).T
    return SpectrogramFeature(values=values)


def eeg_filter_bank(recording):
    """Ten selected channels through the five band filters, each band
    resampled to 128 Hz and stacked into bands x channels x time."""
    if recording.sample_rate < EEG_FEATURE_RATE:
        raise ContractError("filter bank: sample rate must be >= 128 Hz")
    index = {name: i for i, name in enumerate(recording.channel_names)}
    missing = [c for c in EEG_CHANNELS if c not in index]
    if missing:
        raise ChannelError(f"filter bank: channels missing from recording: {missing}")
    selected = recording.data[[index[c] for c in EEG_CHANNELS]]

    bands = []
    for low, high in EEG_BANDS_HZ:
        filt = design_cheby2("bandpass", 8, (low, high), 40.0, recording.sample_rate)
        banded = filter_apply(filt, selected)
        resampled = np.stack([
            resample(AudioSignal(row, recording.sample_rate), EEG_FEATURE_RATE).samples
            for row in banded
        ])
        bands.append(resampled)
    return FilterBankFeature(values=np.stack(bands))


def segment_starts(total_s, window_s, overlap_s):
    """Window start times in seconds: hop = window - overlap."""
    if overlap_s >= window_s:
        raise ContractError("segmentation: overlap must be shorter than the window")
    hop = window_s - overlap_s
    count = int(np.floor((total_s - window_s) / hop)) + 1
    if count <= 0:
        return []
    return [k * hop for k in range(count)]


def paper_overlap_s(window_s):
    """The published pairing: 1 s overlap for 2 s windows, 2 s for 3 s
    (equal 1 s hop, so total data volume matches across settings)."""
    if window_s == 2:
        return 1
    if window_s == 3:
        return 2
    raise ContractError("window length must be 2 or 3 seconds")


def repeat_truncate_time(arr, axis=-1):
    """Tile a 2 s feature once along time and cut at 1.5x the original
    length, giving the 3 s presentation the encoders expect."""
    length = arr.shape[axis]
    doubled = np.concatenate([arr, arr], axis=axis)
    target = int(np.floor(1.5 * length))
    slicer = [slice(None)] * doubled.ndim
    slicer[axis if axis >= 0 else doubled.ndim + axis] = slice(0, target)
    return doubled[tuple(slicer)]


def segment_windows(eeg_feature, speech1, speech2, window_s, overlap_s,
                    label, trial_id=""):
    """Cut aligned decision windows from a trial's EEG feature and its two
    16 kHz speech signals; 2 s windows are repeat-padded to 3 s before the
    per-window STFT."""
    if speech1.sample_rate != SPEECH_RATE or speech2.sample_rate != SPEECH_RATE:
        raise ContractError("segmentation: speech must be at 16 kHz")
    total_s = min(
        eeg_feature.values.shape[-1] / eeg_feature.sample_rate,
        speech1.duration_s,
        speech2.duration_s,
    )
    windows = []
    for start in segment_starts(total_s, window_s, overlap_s):
        e0 = int(round(start * eeg_feature.sample_rate))
        e1 = e0 + int(round(window_s * eeg_feature.sample_rate))
        a0 = int(round(start * SPEECH_RATE))
        a1 = a0 + int(round(window_s * SPEECH_RATE))
        eeg_slice = eeg_feature.values[..., e0:e1]
        s1 = speech1.samples[a0:a1]
        s2 = speech2.samples[a0:a1]
        if window_s == 2:
            eeg_slice = repeat_truncate_time(eeg_slice)
            s1 = repeat_truncate_time(s1)
            s2 = repeat_truncate_time(s2)
        windows.append(DecisionWindow(
            eeg=eeg_slice,
            speech1=stft_log_magnitude(AudioSignal(s1, SPEECH_RATE)),
            speech2=stft_log_magnitude(AudioSignal(s2, SPEECH_RATE)),
            label=int(label),
            start_s=float(start),
            window_s=float(window_s),
            trial_id=trial_id,
        ))
    return windows


def preprocess_speech(raw, lowpass_order=8, stopband_atten_db=40.0):
    """Lowpass at 8 kHz then resample to 16 kHz (the anti-aliasing step
    always precedes the rate change). Audio already at or below 16 kHz is
    band-limited by construction, so the filter is skipped."""
    if SPEECH_LOWPASS_HZ < 0.99 * raw.sample_rate / 2.0:
        filt = design_cheby2("lowpass", lowpass_order, (SPEECH_LOWPASS_HZ,),
                             stopband_atten_db, raw.sample_rate)
        raw = AudioSignal(filter_apply(filt, raw.samples), raw.sample_rate)
    return resample(raw, SPEECH_RATE)
