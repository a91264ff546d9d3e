"""
Feature taxonomy: hierarchical feature groups and raw feature definitions.

Groups form a tree under three roots (Demographics, Hx, Idx). Every raw
feature belongs to exactly one leaf group.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from utils.errors import TaxonomyError
from utils.rng import stream


class FeatureKind(Enum):
    """Raw value kind."""
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"


class Persistence(Enum):
    """How a raw feature applies to encounter-days."""
    STATIC = "static"   # recorded at admission, carried to every day
    DAILY = "daily"     # recorded per calendar day


class Prefix(Enum):
    """Top-level group prefix."""
    DEMOGRAPHICS = "Demographics"
    HX = "Hx"
    IDX = "Idx"


@dataclass(frozen=True)
class FeatureGroup:
    """A node of the feature-group tree."""
    name: str
    prefix: Prefix
    parent: Optional[str] = None


@dataclass(frozen=True)
class FeatureDef:
    """A raw feature and the parameters the simulator draws it from."""
    feature_id: int
    name: str
    group: str
    kind: FeatureKind
    persistence: Persistence
    base_rate: float
    categories: Tuple[str, ...] = ()
    category_weights: Tuple[float, ...] = ()
    mean: float = 0.0
    sd: float = 1.0
    derived: Optional[str] = None
    lower: Optional[float] = None
    decimals: int = 1

    @property
    def is_indicator(self) -> bool:
        """Single-category feature that is either recorded or absent."""
        return self.kind == FeatureKind.CATEGORICAL and len(self.categories) == 1


@dataclass
class FeatureTaxonomy:
    """Group tree plus the raw features hanging off its leaves."""
    groups: Dict[str, FeatureGroup] = field(default_factory=dict)
    features: List[FeatureDef] = field(default_factory=list)

    def add_group(self, group: FeatureGroup):
        """Register a group; its parent must already exist."""
        if group.parent is not None and group.parent not in self.groups:
            raise TaxonomyError(f"parent group {group.parent!r} of {group.name!r} is unknown")
        if group.name in self.groups:
            raise TaxonomyError(f"duplicate group {group.name!r}")
        self.groups[group.name] = group

    def group(self, name: str) -> FeatureGroup:
        """Get a group by name."""
        if name not in self.groups:
            raise TaxonomyError(f"unknown feature group: {name!r}")
        return self.groups[name]

    def children(self, name: str) -> List[str]:
        """Direct child group names."""
        self.group(name)
        return [g.name for g in self.groups.values() if g.parent == name]

    def is_leaf(self, name: str) -> bool:
        return not self.children(name)

    def leaf_groups(self) -> List[str]:
        """All leaf group names in insertion order."""
        return [name for name in self.groups if self.is_leaf(name)]

    def rollup_groups(self) -> List[str]:
        """All non-leaf groups that are not roots."""
        return [name for name, g in self.groups.items() if g.parent is not None and not self.is_leaf(name)]

    def descendant_leaves(self, name: str) -> List[str]:
        """Leaf groups under (or equal to) a group."""
        if self.is_leaf(name):
            return [name]
        leaves = []
        for child in self.children(name):
            leaves.extend(self.descendant_leaves(child))
        return leaves

    def ancestors(self, name: str) -> List[str]:
        """Group names from the parent up to the root."""
        chain = []
        parent = self.group(name).parent
        while parent is not None:
            chain.append(parent)
            parent = self.groups[parent].parent
        return chain

    def resolve(self, name: str, mapping: Dict[str, Any], default: Any = None) -> Any:
        """Value for a group from a mapping keyed by the group or its nearest ancestor."""
        for candidate in [name] + self.ancestors(name):
            if candidate in mapping:
                return mapping[candidate]
        return default

    def features_in(self, name: str) -> List[FeatureDef]:
        """Raw features under a group (any level)."""
        leaves = set(self.descendant_leaves(name))
        return [f for f in self.features if f.group in leaves]

    def feature(self, feature_id: int) -> FeatureDef:
        return self.features[feature_id]

    def validate(self):
        """Check the tree and the feature-to-leaf assignment."""
        for group in self.groups.values():
            seen = {group.name}
            parent = group.parent
            while parent is not None:
                if parent in seen:
                    raise TaxonomyError(f"group hierarchy has a cycle at {parent!r}")
                seen.add(parent)
                parent = self.group(parent).parent
        for index, feature in enumerate(self.features):
            if feature.feature_id != index:
                raise TaxonomyError(f"feature ids must be dense, {feature.name} has id {feature.feature_id}")
            if feature.group not in self.groups or not self.is_leaf(feature.group):
                raise TaxonomyError(f"feature {feature.name} must belong to a leaf group, got {feature.group!r}")

    def to_dict(self) -> dict:
        """Serialize the taxonomy."""
        return {
            'groups': [
                {'name': g.name, 'prefix': g.prefix.value, 'parent': g.parent}
                for g in self.groups.values()
            ],
            'features': [
                {
                    'feature_id': f.feature_id, 'name': f.name, 'group': f.group,
                    'kind': f.kind.value, 'persistence': f.persistence.value,
                    'base_rate': f.base_rate, 'categories': list(f.categories),
                    'category_weights': list(f.category_weights),
                    'mean': f.mean, 'sd': f.sd, 'derived': f.derived,
                    'lower': f.lower, 'decimals': f.decimals,
                }
                for f in self.features
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> 'FeatureTaxonomy':
        """Deserialize a taxonomy."""
        taxonomy = FeatureTaxonomy()
        for g in data['groups']:
            taxonomy.add_group(FeatureGroup(g['name'], Prefix(g['prefix']), g.get('parent')))
        for f in data['features']:
            taxonomy.features.append(FeatureDef(
                feature_id=f['feature_id'], name=f['name'], group=f['group'],
                kind=FeatureKind(f['kind']), persistence=Persistence(f['persistence']),
                base_rate=f['base_rate'], categories=tuple(f.get('categories', ())),
                category_weights=tuple(f.get('category_weights', ())),
                mean=f.get('mean', 0.0), sd=f.get('sd', 1.0), derived=f.get('derived'),
                lower=f.get('lower'), decimals=f.get('decimals', 1),
            ))
        taxonomy.validate()
        return taxonomy


# Leaf templates: (group, parent, slug, kind, persistence, default count, base rate, categories, mean, sd, derived)
_TEMPLATES = [
    ("Demographics: Age", "Demographics", "age", "numeric", "static", 1, 1.0, (), 58.0, 18.0, None),
    ("Demographics: Gender", "Demographics", "gender", "categorical", "static", 1, 1.0, ("female", "male"), 0, 1, None),
    ("Demographics: Race", "Demographics", "race", "categorical", "static", 1, 1.0,
     ("white", "black", "asian", "other", "unknown"), 0, 1, None),
    ("Demographics: Marital Status", "Demographics", "marital", "categorical", "static", 1, 1.0,
     ("married", "single"), 0, 1, None),
    ("Demographics: County & State", "Demographics", "county", "categorical", "static", 1, 1.0, 12, 0, 1, None),
    ("Demographics: Body Mass Index", "Demographics", "bmi", "numeric", "static", 1, 0.95, (), 28.0, 6.0, None),
    ("Hx: History of CDI", "Hx", "hx_outcome", "categorical", "static", 1, 0.0, ("positive",), 0, 1,
     "history_of_outcome"),
    ("Hx: Previous Encounters (Number of Previous Encounters)", "Hx: Previous Encounters", "hx_prev_n",
     "numeric", "static", 1, 0.6, (), 2.0, 1.5, None),
    ("Hx: Previous Encounters (Length of Stay)", "Hx: Previous Encounters", "hx_prev_los",
     "numeric", "static", 1, 0.6, (), 5.0, 3.0, None),
    ("Hx: Diagnoses", "Hx", "hx_dx", "categorical", "static", 20, 0.10, ("1",), 0, 1, None),
    ("Hx: Medications (Medication)", "Hx: Medications", "hx_med", "categorical", "static", 12, 0.12, ("1",), 0, 1, None),
    ("Hx: Medications (Ingredient)", "Hx: Medications", "hx_ingr", "categorical", "static", 5, 0.12, ("1",), 0, 1, None),
    ("Hx: Medications (Class)", "Hx: Medications", "hx_class", "categorical", "static", 3, 0.15, ("1",), 0, 1, None),
    ("Idx: Admission Details (Admission Type)", "Idx: Admission Details", "adm_type", "categorical", "static", 1, 1.0,
     ("elective", "urgent", "emergency"), 0, 1, None),
    ("Idx: Admission Details (Patient Type)", "Idx: Admission Details", "pat_type", "categorical", "static", 1, 1.0,
     ("medical", "surgical", "oncology", "transplant"), 0, 1, None),
    ("Idx: Admission Details (Insurance Type)", "Idx: Admission Details", "insurance", "categorical", "static", 1, 1.0,
     ("private", "medicare", "medicaid"), 0, 1, None),
    ("Idx: Admission Details (Emergency Visit)", "Idx: Admission Details", "ed_visit", "categorical", "static", 1, 0.4,
     ("yes",), 0, 1, None),
    ("Idx: In-Hospital Locations", "Idx", "unit", "categorical", "daily", 12, 0.12, ("1",), 0, 1, None),
    ("Idx: Vital Sign Measurements", "Idx", "vital", "numeric", "daily", 4, 0.9, (), 0.0, 1.0, None),
    ("Idx: Laboratory Results", "Idx", "lab", "numeric", "daily", 8, 0.5, (), 0.0, 1.0, None),
    ("Idx: Medications (Medication)", "Idx: Medications", "idx_med", "categorical", "daily", 12, 0.08, ("1",), 0, 1, None),
    ("Idx: Medications (Ingredient)", "Idx: Medications", "idx_ingr", "categorical", "daily", 5, 0.08, ("1",), 0, 1, None),
    ("Idx: Medications (Class)", "Idx: Medications", "idx_class", "categorical", "daily", 3, 0.10, ("1",), 0, 1, None),
    ("Idx: Colonization Pressure (Unit-based)", "Idx: Colonization Pressure", "cp_unit", "numeric", "daily", 2, 1.0, (),
     0.0, 1.0, "location_pressure"),
    ("Idx: Colonization Pressure (Hospital-wide)", "Idx: Colonization Pressure", "cp_hosp", "numeric", "daily", 2, 1.0,
     (), 0.0, 1.0, None),
]

# Numeric bounds: slug -> (lower bound, decimals)
_NUMERIC_BOUNDS = {
    "age": (18.0, 0),
    "bmi": (12.0, 1),
    "hx_prev_n": (0.0, 0),
    "hx_prev_los": (1.0, 0),
}

_INTERMEDIATE = [
    ("Hx: Previous Encounters", "Hx"),
    ("Hx: Medications", "Hx"),
    ("Idx: Admission Details", "Idx"),
    ("Idx: Medications", "Idx"),
    ("Idx: Colonization Pressure", "Idx"),
]


def _prefix_of(name: str) -> Prefix:
    head = name.split(":")[0]
    return Prefix(head)


def default_taxonomy(sizes: Optional[Dict[str, int]] = None, seed: int = 0) -> FeatureTaxonomy:
    """
    Build the desk-scale taxonomy.

    Args:
        sizes: optional per-leaf feature counts overriding the defaults
            (e.g. {"Idx: Laboratory Results": 20}); County & State takes the
            number of categories instead.
        seed: stream seed for per-feature rates, means and category weights.
    """
    sizes = dict(sizes or {})
    known = {template[0] for template in _TEMPLATES}
    unknown = set(sizes) - known
    if unknown:
        raise TaxonomyError(f"unknown leaf groups in taxonomy sizes: {sorted(unknown)}")

    taxonomy = FeatureTaxonomy()
    for root in Prefix:
        taxonomy.add_group(FeatureGroup(root.value, root))
    for name, parent in _INTERMEDIATE:
        taxonomy.add_group(FeatureGroup(name, _prefix_of(name), parent))

    for (group, parent, slug, kind, persistence, count, rate, categories,
         mean, sd, derived) in _TEMPLATES:
        taxonomy.add_group(FeatureGroup(group, _prefix_of(group), parent))
        size = sizes.get(group, count if not isinstance(categories, int) else categories)
        if isinstance(categories, int):
            # County & State: one feature, `size` categories
            categories = tuple(f"region_{i:02d}" for i in range(size))
            size = 1
        if size < 0:
            raise TaxonomyError(f"negative size for {group!r}")
        for i in range(size):
            feature_id = len(taxonomy.features)
            rng = stream(seed, "taxonomy", feature_id)
            feature_rate = rate
            if 0.0 < rate < 1.0:
                feature_rate = float(min(1.0, rate * rng.uniform(0.5, 1.5)))
            weights: Tuple[float, ...] = ()
            if len(categories) > 1:
                raw = rng.dirichlet(alpha=[4.0] * len(categories))
                weights = tuple(float(w) for w in raw)
            feature_mean, feature_sd = mean, sd
            if kind == "numeric" and mean == 0.0:
                feature_mean = float(rng.normal(0.0, 2.0))
                feature_sd = float(rng.uniform(0.5, 2.0))
            name = slug if size == 1 else f"{slug}_{i:02d}"
            lower, decimals = _NUMERIC_BOUNDS.get(slug, (None, 1))
            taxonomy.features.append(FeatureDef(
                feature_id=feature_id,
                name=name,
                group=group,
                kind=FeatureKind(kind),
                persistence=Persistence(persistence),
                base_rate=feature_rate,
                categories=tuple(categories),
                category_weights=weights,
                mean=feature_mean,
                sd=feature_sd,
                derived=derived,
                lower=lower,
                decimals=decimals,
            ))
    taxonomy.validate()
    return taxonomy
