import json
import math
import yaml
import hashlib
import numpy as np
import pandas as pd
from enum import Enum
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
from src.data_handler import EncodedDay
from src.intersection import IntersectionConfig
from src.labeling import compute_targets, phase_states
from src.exceptions import ConfigError, DegenerateVariable, EmptySpan, HashMismatch, MalformedRecord, MissingTimestamp


MANIFEST_VERSION = '1'


class VariableKind(str, Enum):
    NUMERIC     = 'numeric'
    CATEGORICAL = 'categorical'
    CYCLIC_TIME = 'cyclic-time'


@dataclass(frozen = True)
class Declaration:
    """
    Kind hint for one flattened variable. Categorical `states` are the ones known in advance; observed states are
    added to them when the schema is built.
    """
    name             : str
    kind             : VariableKind
    states           : Tuple[str, ...] = ()
    drop_if_constant : bool            = False


@dataclass(frozen = True)
class VariableSpec:
    name    : str
    kind    : VariableKind
    minimum : Optional[float]   = None
    maximum : Optional[float]   = None
    states  : Tuple[str, ...]   = ()

    @property
    def width(self) -> int:
        if self.kind is VariableKind.NUMERIC:
            return 1
        if self.kind is VariableKind.CATEGORICAL:
            return len(self.states) - 1
        return 2

    def columns(self) -> List[str]:
        if self.kind is VariableKind.NUMERIC:
            return [self.name]
        if self.kind is VariableKind.CATEGORICAL:
            return [f'{self.name}={state}' for state in self.states[:-1]]
        return [f'{self.name}.sin', f'{self.name}.cos']

    def to_dict(self) -> dict:
        entry = {'name' : self.name, 'kind' : self.kind.value}
        if self.kind is VariableKind.NUMERIC:
            entry['min'] = self.minimum
            entry['max'] = self.maximum
        elif self.kind is VariableKind.CATEGORICAL:
            entry['states'] = list(self.states)
        return entry

    @classmethod
    def from_dict(cls, entry : dict) -> 'VariableSpec':
        return cls(name    = entry['name'],
                   kind    = VariableKind(entry['kind']),
                   minimum = entry.get('min'),
                   maximum = entry.get('max'),
                   states  = tuple(entry.get('states', ())))


@dataclass(frozen = True)
class SchemaManifest:
    """
    Ordered feature dictionary. Fixes the position of every encoded column; the content hash ties checkpoints and
    encoded days to the exact manifest they were produced with.
    """
    version   : str
    variables : Tuple[VariableSpec, ...]

    @property
    def feature_count(self) -> int:
        return sum(variable.width for variable in self.variables)

    def body(self) -> dict:
        return {'version'       : self.version,
                'feature_count' : self.feature_count,
                'variables'     : [variable.to_dict() for variable in self.variables]}

    @property
    def content_hash(self) -> str:
        canonical = json.dumps(self.body(), sort_keys = True, separators = (',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    @property
    def digest(self) -> bytes:
        return bytes.fromhex(self.content_hash)

    @property
    def source_columns(self) -> List[str]:
        return [v.name for v in self.variables if v.kind is not VariableKind.CYCLIC_TIME]

    def feature_names(self) -> List[str]:
        return [column for variable in self.variables for column in variable.columns()]

    def to_json(self) -> str:
        payload                 = self.body()
        payload['content_hash'] = self.content_hash
        return json.dumps(payload, sort_keys = True, indent = 2) + '\n'

    @classmethod
    def from_json(cls, text : str) -> 'SchemaManifest':
        payload  = json.loads(text)
        manifest = cls(version   = str(payload['version']),
                       variables = tuple(VariableSpec.from_dict(v) for v in payload['variables']))
        if payload.get('content_hash') != manifest.content_hash:
            raise HashMismatch('manifest content does not match its recorded hash')
        return manifest


@dataclass(frozen = True)
class FlatRow:
    timestamp : int
    values    : Dict[str, Any]


@dataclass(frozen = True)
class FeatureVector:
    timestamp : int
    features  : np.ndarray
    missing   : bool


def _is_missing(value) -> bool:
    if value is None:
        return True
    try:
        return bool(pd.isna(value))
    except (TypeError, ValueError):
        return False


def category_label(value) -> Optional[str]:
    """
    Canonical text label of a categorical value: 1, 1.0 and True all read '1'.
    """
    if _is_missing(value):
        return None
    if isinstance(value, (bool, np.bool_)):
        return '1' if value else '0'
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


class Preprocessor:
    def __init__(self, timestamp_key : str = 'timestamp', time_variable : str = 'time_of_day'):
        """
        The class Preprocessor turns raw per-second records into fixed-order numeric feature vectors: it flattens the
        nested records, builds and applies the schema manifest (min-max scaling, n-1 dummy coding, cyclic time of
        day) and lays every day onto a gapless one-second grid with -1 marking missing values.
        Arguments:
        ----------
            - timestamp_key (str) : record key holding the Unix-second timestamp.
            - time_variable (str) : manifest name of the cyclic time-of-day variable.
        """
        self.timestamp_key = timestamp_key
        self.time_variable = time_variable
        self.log           = LoggerSetup(logger_file = 'preprocessor',
                                         logger_name = 'preprocessor').get_logger()

    def parse_record(self, record, line : int = None) -> dict:
        where = f' (line {line})' if line is not None else ''
        if isinstance(record, (str, bytes)):
            try:
                record = json.loads(record)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f'record{where} is not valid JSON: {e}') from e
        if not isinstance(record, dict):
            raise MalformedRecord(f'record{where} is not an object')
        stamp = record.get(self.timestamp_key)
        if _is_missing(stamp) or isinstance(stamp, bool):
            raise MissingTimestamp(f'record{where} has no {self.timestamp_key}')
        try:
            int(stamp)
        except (TypeError, ValueError) as e:
            raise MissingTimestamp(f'record{where} has an unreadable {self.timestamp_key}: {stamp!r}') from e
        return record

    def flatten_record(self, record, manifest : SchemaManifest = None) -> FlatRow:
        """
        Flattens one nested record into dot-joined leaf keys.
        Arguments:
        ----------
            - record   (str | dict)     : the record text or its parsed object.
            - manifest (SchemaManifest) : when given, keeps exactly the manifest variables; absent ones become None.
        Returns:
        --------
            - FlatRow : timestamp plus flattened values.
        """
        parsed    = self.parse_record(record)
        flat      = pd.json_normalize(parsed, sep = '.').iloc[0].to_dict()
        timestamp = int(flat.pop(self.timestamp_key))
        if manifest is not None:
            flat = {name : (None if _is_missing(flat.get(name)) else flat[name]) for name in manifest.source_columns}
        return FlatRow(timestamp = timestamp, values = flat)

    def flatten_day(self, records : Iterable) -> pd.DataFrame:
        """
        Flattens a whole day of records at once; one row per record, one column per leaf path.
        """
        parsed = [self.parse_record(record, line = i + 1) for i, record in enumerate(records)]
        if not parsed:
            return pd.DataFrame({self.timestamp_key : pd.Series(dtype = np.int64)})
        frame                     = pd.json_normalize(parsed, sep = '.')
        frame[self.timestamp_key] = frame[self.timestamp_key].astype(np.int64)
        return frame

    def default_declarations(self, config : IntersectionConfig) -> List[Declaration]:
        """
        Variable families of an intersection feed: per-phase state and exit mode, per-pedestrian-phase state and
        call, per-detector actuation/volume/occupancy/speed, the timing plan and the cyclic time of day.
        Identity fields (device id, firmware) are left undeclared so ingest drops them.
        """
        declarations = []
        for phase_id in config.phase_ids:
            declarations.append(Declaration(f'signal.phases.{phase_id}.state', VariableKind.CATEGORICAL,
                                            ('green', 'yellow', 'red')))
            declarations.append(Declaration(f'signal.phases.{phase_id}.exit_mode', VariableKind.CATEGORICAL,
                                            ('gap-out', 'max-out', 'force-off', 'skip', 'none')))
        for phase_id in sorted(config.ped_phases):
            declarations.append(Declaration(f'signal.peds.{phase_id}.state', VariableKind.CATEGORICAL,
                                            ('walk', 'flashing', 'dont-walk')))
            declarations.append(Declaration(f'signal.peds.{phase_id}.call', VariableKind.CATEGORICAL, ('1', '0')))
        for detector in config.detectors:
            prefix = f'detectors.{detector.id}'
            declarations.append(Declaration(f'{prefix}.actuation', VariableKind.CATEGORICAL, ('1', '0')))
            for name in ('volume', 'occupancy', 'speed'):
                declarations.append(Declaration(f'{prefix}.{name}', VariableKind.NUMERIC, drop_if_constant = True))
        plan_ids = tuple(str(plan.plan_id) for _, plan in config.tod_schedule)
        declarations.append(Declaration('timing.plan_id', VariableKind.CATEGORICAL, tuple(dict.fromkeys(plan_ids)),
                                        drop_if_constant = True))
        for name in ('cycle_length', 'offset', 'cycle_second'):
            declarations.append(Declaration(f'timing.{name}', VariableKind.NUMERIC, drop_if_constant = True))
        declarations.append(Declaration(self.time_variable, VariableKind.CYCLIC_TIME))
        return declarations

    def load_declarations(self, path : str) -> List[Declaration]:
        """
        Reads declarations from YAML: a list of {name, kind, states, drop_if_constant} entries.
        """
        try:
            with open(path, 'r', encoding = 'utf-8') as handle:
                raw = yaml.safe_load(handle) or []
            return [Declaration(name             = str(entry['name']),
                                kind             = VariableKind(entry['kind']),
                                states           = tuple(str(s) for s in entry.get('states', ())),
                                drop_if_constant = bool(entry.get('drop_if_constant', False)))
                    for entry in raw]
        except (KeyError, TypeError, ValueError) as e:
            self.log.error(f'Invalid schema declarations in {path}: {e}')
            raise ConfigError(f'invalid schema declarations in {path}: {e}') from e

    def _degenerate(self, declaration : Declaration, reason : str):
        if declaration.drop_if_constant:
            self.log.warning(f'Dropping {declaration.name}: {reason}')
            return
        self.log.error(f'Degenerate variable {declaration.name}: {reason}')
        raise DegenerateVariable(f'{declaration.name}: {reason}')

    def build_schema(self, sample_days : Sequence[pd.DataFrame], declarations : Sequence[Declaration]) -> SchemaManifest:
        """
        Builds the manifest from flattened sample days.
        Arguments:
        ----------
            - sample_days  (list of pd.DataFrame) : days returned by `flatten_day`.
            - declarations (list of Declaration)  : variable kind hints, in feature order.
        Returns:
        --------
            - SchemaManifest : numeric bounds are the extremes over all sample days; categorical states are listed in
                               first-observed order followed by declared but unobserved states, the last one being the
                               dropped reference state.
        """
        if not sample_days:
            raise EmptySpan('at least one sample day is required to build the schema')
        frame     = pd.concat(list(sample_days), ignore_index = True, sort = False)
        variables = []
        for declaration in declarations:
            if declaration.kind is VariableKind.CYCLIC_TIME:
                variables.append(VariableSpec(name = declaration.name, kind = declaration.kind))
                continue
            column = frame[declaration.name] if declaration.name in frame.columns else pd.Series([], dtype = object)

            if declaration.kind is VariableKind.NUMERIC:
                values = pd.to_numeric(column, errors = 'coerce').dropna()
                if values.empty:
                    self._degenerate(declaration, 'never observed')
                    continue
                minimum, maximum = float(values.min()), float(values.max())
                if minimum >= maximum:
                    self._degenerate(declaration, f'constant value {minimum}')
                    continue
                variables.append(VariableSpec(name = declaration.name, kind = declaration.kind,
                                              minimum = minimum, maximum = maximum))
            else:
                observed = [label for label in pd.unique(column.map(category_label).dropna())]
                states   = observed + [state for state in declaration.states if state not in observed]
                if len(states) < 2:
                    self._degenerate(declaration, f'single state {states}')
                    continue
                variables.append(VariableSpec(name = declaration.name, kind = declaration.kind, states = tuple(states)))

        manifest = SchemaManifest(version = MANIFEST_VERSION, variables = tuple(variables))
        self.log.info(f'Schema built from {len(sample_days)} day(s): {len(variables)} variables, '
                      f'{manifest.feature_count} features, hash {manifest.content_hash[:12]}')
        return manifest

    def encode_frame(self, frame : pd.DataFrame, manifest : SchemaManifest) -> np.ndarray:
        """
        Encodes every row of a flattened frame; columns follow the manifest order.
        """
        n_rows = len(frame)
        blocks = []
        for variable in manifest.variables:
            if variable.kind is VariableKind.CYCLIC_TIME:
                seconds = frame[self.timestamp_key].to_numpy(dtype = np.float64) % Config.SECONDS_PER_DAY
                angle   = 2.0 * math.pi * seconds / Config.SECONDS_PER_DAY
                blocks.append(np.column_stack([(np.sin(angle) + 1.0) / 2.0, (np.cos(angle) + 1.0) / 2.0]))
                continue

            present = variable.name in frame.columns
            if variable.kind is VariableKind.NUMERIC:
                values = pd.to_numeric(frame[variable.name], errors = 'coerce').to_numpy(dtype = np.float64) \
                         if present else np.full(n_rows, np.nan)
                scaled = np.clip((values - variable.minimum) / (variable.maximum - variable.minimum), 0.0, 1.0)
                blocks.append(np.where(np.isnan(values), Config.MISSING, scaled)[:, None])
                continue

            labels  = frame[variable.name].map(category_label) if present else pd.Series([None] * n_rows, dtype = object)
            missing = labels.isna().to_numpy()
            unknown = ~labels.isin(variable.states).to_numpy() & ~missing
            if unknown.any():
                self.log.warning(f'{variable.name}: {int(unknown.sum())} value(s) outside {list(variable.states)} '
                                 f'encoded as the reference state')
            block          = np.zeros((n_rows, variable.width))
            for k, state in enumerate(variable.states[:-1]):
                block[:, k] = (labels == state).to_numpy(dtype = np.float64)
            block[missing] = Config.MISSING
            blocks.append(block)
        return np.hstack(blocks) if blocks else np.zeros((n_rows, 0))

    def encode_row(self, row : FlatRow, manifest : SchemaManifest) -> FeatureVector:
        """
        Encodes one flattened row.
        Arguments:
        ----------
            - row      (FlatRow)        : the flattened record.
            - manifest (SchemaManifest) : the frozen manifest.
        Returns:
        --------
            - FeatureVector : values in [0, 1], or -1 for missing leaves.
        """
        frame    = pd.DataFrame([{self.timestamp_key : row.timestamp, **row.values}])
        features = self.encode_frame(frame, manifest)[0]
        return FeatureVector(timestamp = row.timestamp,
                             features  = features,
                             missing   = bool(np.all(features == Config.MISSING)))

    def _as_frame(self, rows) -> pd.DataFrame:
        if isinstance(rows, pd.DataFrame):
            return rows
        return pd.DataFrame([{self.timestamp_key : row.timestamp, **row.values} for row in rows],
                            columns = None if rows else [self.timestamp_key])

    def deduplicate(self, frame : pd.DataFrame) -> pd.DataFrame:
        """
        Sorts by timestamp (stable) and keeps the first record of every second.
        """
        ordered = frame.sort_values(self.timestamp_key, kind = 'mergesort')
        return ordered.drop_duplicates(subset = self.timestamp_key, keep = 'first')

    def reindex_frame(self, rows, span : Tuple[int, int]) -> pd.DataFrame:
        """
        Lays flattened rows onto the inclusive one-second grid `span`; absent seconds are all-NaN rows.
        """
        start, end = int(span[0]), int(span[1])
        if end < start:
            raise EmptySpan(f'span [{start}, {end}] holds no second')
        frame = self._as_frame(rows)
        if self.timestamp_key not in frame.columns:
            frame = frame.assign(**{self.timestamp_key : pd.Series(dtype = np.int64)})
        frame = self.deduplicate(frame)
        frame = frame[(frame[self.timestamp_key] >= start) & (frame[self.timestamp_key] <= end)]
        return frame.set_index(self.timestamp_key).reindex(pd.RangeIndex(start, end + 1))

    def reindex_day(self, rows, span : Tuple[int, int], manifest : SchemaManifest) -> np.ndarray:
        """
        Encodes a day onto its gapless one-second grid.
        Arguments:
        ----------
            - rows     (pd.DataFrame | list of FlatRow) : flattened records, any order, duplicates allowed.
            - span     (tuple)                          : inclusive [start, end] Unix seconds.
            - manifest (SchemaManifest)                 : the frozen manifest.
        Returns:
        --------
            - np.ndarray : (end - start + 1, feature_count); row k encodes second start + k, absent seconds are all -1.
        """
        start, end = int(span[0]), int(span[1])
        if end < start:
            raise EmptySpan(f'span [{start}, {end}] holds no second')
        frame = self._as_frame(rows)
        grid  = pd.RangeIndex(start, end + 1)
        if frame.empty or self.timestamp_key not in frame.columns:
            return np.full((len(grid), manifest.feature_count), Config.MISSING)

        frame   = self.deduplicate(frame)
        frame   = frame[(frame[self.timestamp_key] >= start) & (frame[self.timestamp_key] <= end)]
        encoded = pd.DataFrame(self.encode_frame(frame, manifest), index = frame[self.timestamp_key].to_numpy())
        return encoded.reindex(grid, fill_value = Config.MISSING).to_numpy(dtype = np.float64)

    def prepare_day(self, frame : pd.DataFrame, span : Tuple[int, int], manifest : SchemaManifest,
                    phase_ids : Sequence[int] = tuple(range(1, Config.N_PHASES + 1))) -> EncodedDay:
        """
        Encodes the features and computes the remaining-time targets of one flattened day.
        """
        features = self.reindex_day(frame, span, manifest)
        states   = phase_states(self.reindex_frame(frame, span), phase_ids)
        targets  = compute_targets(states, horizon = Config.HORIZON_SECONDS)
        day      = EncodedDay(start           = int(span[0]),
                              features        = features.astype(np.float32),
                              remaining       = targets.remaining.astype(np.float32),
                              mask            = targets.mask.astype(np.float32),
                              manifest_digest = manifest.digest)
        self.log.info(f'Prepared {day.rows} seconds from {int(span[0])}: '
                      f'{int(targets.mask.sum())} valid targets of {targets.mask.size}')
        return day
