"""Seeded fixture databases and the paired micro-corpus used for regression.

Six miniature databases mirror the shapes the detector targets: a banking
schema with a known gold count, a card catalog with ambiguous values, a
racing schema with an empty near-duplicate table, a chemistry schema, a Q&A
schema with a duplicated display name, and a schools schema with quoted
column names.  Each incorrect/correct query pair isolates one signal.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from pathlib import Path

from sqltriage.signals import Signal


def _create(path, statements, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        conn.execute("PRAGMA foreign_keys = ON")
        for statement in statements:
            conn.execute(statement)
        for table, data in rows:
            if not data:
                continue
            placeholders = ", ".join("?" for _ in data[0])
            conn.executemany(
                f"INSERT INTO {table} VALUES ({placeholders})", data)
        conn.commit()
    finally:
        conn.close()


def build_financial(path) -> None:
    """Banking schema: 26 female clients in the Jesenik district."""
    statements = [
        """CREATE TABLE district (
            district_id INTEGER PRIMARY KEY,
            a2 TEXT,
            a3 TEXT
        )""",
        """CREATE TABLE client (
            client_id INTEGER PRIMARY KEY,
            gender TEXT,
            district_id INTEGER REFERENCES district(district_id)
        )""",
        """CREATE TABLE account (
            account_id INTEGER PRIMARY KEY,
            district_id INTEGER REFERENCES district(district_id)
        )""",
        """CREATE TABLE disp (
            disp_id INTEGER PRIMARY KEY,
            client_id INTEGER REFERENCES client(client_id),
            account_id INTEGER REFERENCES account(account_id)
        )""",
    ]
    districts = [
        (1, "Praha", "Prague"),
        (54, "Brno", "South Moravia"),
        (68, "Jesenik", "North Moravia"),
        (77, "Pisek", "South Bohemia"),
    ]
    # Exactly 26 female clients in Jesenik (ids 101..126); 23 of them have an
    # account whose id equals their client id, so the hallucinated
    # client_id = account_id join undercounts at 23.
    clients = [(cid, "F", 68) for cid in range(101, 127)]
    clients += [(201, "M", 68), (202, "M", 68)]
    clients += [(cid, "F", 77) for cid in range(301, 306)]
    clients += [(401, "M", 1), (3541, "M", 77)]
    accounts = [(aid, 68) for aid in range(101, 124)]
    accounts += [(555, 68), (700, 77), (701, 1)]
    disps = [(1, 3541, 555), (2, 101, 101), (3, 102, 102)]
    _create(path, statements, [
        ("district", districts),
        ("client", clients),
        ("account", accounts),
        ("disp", disps),
    ])


def build_card_games(path) -> None:
    """Card catalog: foil ids never collide, 'phyrexian' lives in two columns."""
    statements = [
        """CREATE TABLE cards (
            id INTEGER PRIMARY KEY,
            name TEXT,
            artist TEXT,
            uuid TEXT UNIQUE,
            cardKingdomFoilId TEXT,
            cardKingdomId TEXT,
            hasFoil INTEGER,
            isFullArt INTEGER,
            isOversized INTEGER,
            isPromo INTEGER,
            watermark TEXT
        )""",
        """CREATE TABLE rulings (
            id INTEGER PRIMARY KEY,
            uuid TEXT REFERENCES cards(uuid)
        )""",
        """CREATE TABLE foreign_data (
            id INTEGER PRIMARY KEY,
            uuid TEXT REFERENCES cards(uuid),
            language TEXT
        )""",
    ]
    cards = [
        (1, "Angel of Mercy", "Volkan Baga", "u-001",
         "10001", "20001", 1, 0, 0, 0, None),
        (2, "Dark Ritual", "Clint Cearley", "u-002",
         "10002", "20002", 1, 0, 0, 1, None),
        (3, "Phyrexian Arena", "Pete Venters", "u-003",
         None, "20003", 0, 0, 0, 0, "phyrexian"),
        (4, "Phyrexian Obliterator", "Todd Lockwood", "u-004",
         None, None, 0, 1, 0, 0, "phyrexian"),
        (5, "Serra Angel", "Douglas Shuler", "u-005",
         "10005", "20005", 1, 0, 0, 0, None),
        (6, "Elesh Norn", "Igor Kieryluk", "u-006",
         None, None, 0, 0, 0, 0, None),
    ]
    # First ruling points at a non-promo card so collapsing the subqueries
    # to the first row visibly diverges from the most-ruled promo card.
    rulings = [(1, "u-004"), (2, "u-002"), (3, "u-002"), (4, "u-002")]
    foreign_data = [
        (1, "u-003", "Phyrexian"),
        (2, "u-006", "Phyrexian"),
        (3, "u-001", "German"),
        (4, "u-002", "French"),
    ]
    _create(path, statements, [
        ("cards", cards),
        ("rulings", rulings),
        ("foreign_data", foreign_data),
    ])


def build_formula_1(path) -> None:
    """Racing schema: results stays empty beside a populated driverStandings."""
    statements = [
        """CREATE TABLE drivers (
            driverId INTEGER PRIMARY KEY,
            forename TEXT,
            surname TEXT,
            nationality TEXT
        )""",
        """CREATE TABLE races (
            raceId INTEGER PRIMARY KEY,
            year INTEGER,
            round INTEGER,
            name TEXT
        )""",
        """CREATE TABLE results (
            resultId INTEGER PRIMARY KEY,
            raceId INTEGER REFERENCES races(raceId),
            driverId INTEGER REFERENCES drivers(driverId),
            points REAL,
            positionOrder INTEGER
        )""",
        """CREATE TABLE driverStandings (
            driverStandingsId INTEGER PRIMARY KEY,
            raceId INTEGER REFERENCES races(raceId),
            driverId INTEGER REFERENCES drivers(driverId),
            points REAL,
            position INTEGER,
            wins INTEGER
        )""",
    ]
    drivers = [
        (1, "Lewis", "Hamilton", "British"),
        (2, "Max", "Verstappen", "Dutch"),
        (3, "Fernando", "Alonso", "Spanish"),
    ]
    races = [
        (10, 2020, 14, "Turkish Grand Prix"),
        (11, 2021, 16, "Turkish Grand Prix"),
        (12, 2021, 1, "Bahrain Grand Prix"),
    ]
    standings = [
        (100, 10, 1, 25.0, 1, 1),
        (101, 11, 1, 18.0, 2, 0),
        (102, 12, 1, 25.0, 1, 1),
        (103, 11, 2, 25.0, 1, 1),
    ]
    _create(path, statements, [
        ("drivers", drivers),
        ("races", races),
        ("results", []),
        ("driverStandings", standings),
    ])


def build_toxicology(path) -> None:
    """Chemistry schema: bond TR000_2_5 exists, TR_000_2_5 does not."""
    statements = [
        """CREATE TABLE molecule (
            molecule_id TEXT PRIMARY KEY,
            label INTEGER
        )""",
        """CREATE TABLE atom (
            atom_id TEXT PRIMARY KEY,
            molecule_id TEXT REFERENCES molecule(molecule_id),
            element TEXT
        )""",
        """CREATE TABLE bond (
            bond_id TEXT PRIMARY KEY,
            molecule_id TEXT REFERENCES molecule(molecule_id),
            bond_type TEXT
        )""",
        """CREATE TABLE connected (
            atom_id TEXT REFERENCES atom(atom_id),
            atom_id2 TEXT REFERENCES atom(atom_id),
            bond_id TEXT REFERENCES bond(bond_id)
        )""",
    ]
    molecules = [("TR000", 1)]
    atoms = [
        ("TR000_1", "TR000", "cl"),
        ("TR000_2", "TR000", "c"),
        ("TR000_3", "TR000", "h"),
        ("TR000_5", "TR000", "h"),
    ]
    bonds = [("TR000_2_5", "TR000", "-"), ("TR000_1_2", "TR000", "=")]
    connected = [
        ("TR000_2", "TR000_5", "TR000_2_5"),
        ("TR000_5", "TR000_2", "TR000_2_5"),
        ("TR000_1", "TR000_2", "TR000_1_2"),
        ("TR000_2", "TR000_1", "TR000_1_2"),
    ]
    _create(path, statements, [
        ("molecule", molecules),
        ("atom", atoms),
        ("bond", bonds),
        ("connected", connected),
    ])


def build_codebase_community(path) -> None:
    """Q&A schema: two users share the display name Pierre."""
    statements = [
        """CREATE TABLE users (
            Id INTEGER PRIMARY KEY,
            DisplayName TEXT
        )""",
        """CREATE TABLE badges (
            Id INTEGER PRIMARY KEY,
            UserId INTEGER REFERENCES users(Id),
            Name TEXT
        )""",
    ]
    users = [(10, "Pierre"), (11, "Pierre"), (12, "Alice"), (13, "Bob")]
    badges = [
        (1, 10, "Teacher"),
        (2, 10, "Supporter"),
        (3, 11, "Student"),
        (4, 12, "Editor"),
        (5, 13, "Critic"),
    ]
    _create(path, statements, [("users", users), ("badges", badges)])


def build_california_schools(path) -> None:
    """Schools schema with quoted multi-word column names."""
    statements = [
        """CREATE TABLE schools (
            CDSCode TEXT PRIMARY KEY,
            City TEXT,
            School TEXT,
            County TEXT
        )""",
        """CREATE TABLE frpm (
            CDSCode TEXT PRIMARY KEY REFERENCES schools(CDSCode),
            "School Name" TEXT,
            "Enrollment (K-12)" REAL,
            "FRPM Count (K-12)" REAL
        )""",
    ]
    schools = [
        ("01", "Fresno", "Fresno High", "Fresno"),
        ("02", "Oakland", "Oakland High", "Alameda"),
        ("03", "Fresno", "Roosevelt", "Fresno"),
        ("04", "Davis", "Davis High", "Yolo"),
        ("05", "Irvine", "Irvine High", "Orange"),
        ("06", "Chico", "Chico High", "Butte"),
        ("07", "Napa", "Napa High", "Napa"),
    ]
    frpm = [
        ("01", "Fresno High", 500.0, 210.0),
        ("02", "Oakland High", 300.0, 150.0),
        ("03", "Roosevelt", 200.0, 80.0),
        ("04", "Davis High", 800.0, 320.0),
        ("05", "Irvine High", 650.0, 140.0),
        ("06", "Chico High", 120.0, 60.0),
        ("07", "Napa High", 90.0, 45.0),
    ]
    _create(path, statements, [("schools", schools), ("frpm", frpm)])


FIXTURE_BUILDERS = {
    "financial": build_financial,
    "card_games": build_card_games,
    "formula_1": build_formula_1,
    "toxicology": build_toxicology,
    "codebase_community": build_codebase_community,
    "california_schools": build_california_schools,
}


def build_all(root) -> dict:
    """Create every fixture under root/<db_id>/<db_id>.sqlite; returns paths."""
    root = Path(root)
    paths = {}
    for db_id, builder in FIXTURE_BUILDERS.items():
        path = root / db_id / f"{db_id}.sqlite"
        builder(path)
        paths[db_id] = path
    return paths


# ---------------------------------------------------------------------------
# Paired micro-corpus: each pair isolates one signal


@dataclass(frozen=True)
class PairCase:
    signal: Signal
    db_id: str
    question: str
    evidence: str
    incorrect_sql: str
    correct_sql: str


MICRO_CORPUS = (
    PairCase(
        signal=Signal.ABNORMAL_RESULT,
        db_id="card_games",
        question="Which cards have the same Card Kingdom foil id and Card "
                 "Kingdom id, have a foil version, and are not full art, "
                 "oversized, or promotional?",
        evidence="",
        incorrect_sql=(
            "SELECT c.id FROM cards c "
            "WHERE c.cardKingdomFoilId = c.cardKingdomId "
            "AND c.cardKingdomId IS NOT NULL "
            "AND c.hasFoil = 1 AND c.isFullArt = 0 "
            "AND c.isOversized = 0 AND c.isPromo = 0;"
        ),
        correct_sql=(
            "SELECT id FROM cards WHERE cardKingdomFoilId IS NOT NULL "
            "AND cardKingdomId IS NOT NULL;"
        ),
    ),
    PairCase(
        signal=Signal.EMPTY_PREDICATE,
        db_id="toxicology",
        question="Which atoms are connected via bond TR000_2_5?",
        evidence="",
        incorrect_sql=(
            "SELECT c.atom_id, c.atom_id2 FROM connected c "
            "JOIN bond b ON c.bond_id = b.bond_id "
            "WHERE b.bond_id = 'TR_000_2_5';"
        ),
        correct_sql=(
            "SELECT T.atom_id FROM connected AS T "
            "WHERE T.bond_id = 'TR000_2_5';"
        ),
    ),
    PairCase(
        signal=Signal.INCORRECT_SUBQUERY_FILTER,
        db_id="codebase_community",
        question="List the names of badges obtained by the user whose display "
                 "name is Pierre.",
        evidence="",
        incorrect_sql=(
            "SELECT Name FROM badges WHERE UserId = "
            "( SELECT Id FROM users WHERE DisplayName = 'Pierre' );"
        ),
        correct_sql=(
            "SELECT Name FROM badges WHERE UserId IN "
            "( SELECT Id FROM users WHERE DisplayName = 'Pierre' );"
        ),
    ),
    PairCase(
        signal=Signal.INCORRECT_GROUPBY,
        db_id="california_schools",
        question="Which five cities have the lowest total enrollment from "
                 "kindergarten through grade 12?",
        evidence="K-12 enrollment refers to `Enrollment (K-12)`",
        incorrect_sql=(
            "SELECT s.City, f.`Enrollment (K-12)` FROM frpm f "
            "JOIN schools s ON f.CDSCode = s.CDSCode "
            "GROUP BY s.City, f.`Enrollment (K-12)` "
            "ORDER BY SUM(f.`Enrollment (K-12)`) ASC LIMIT 5;"
        ),
        correct_sql=(
            "SELECT T2.City FROM frpm AS T1 "
            "INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode "
            "GROUP BY T2.City "
            "ORDER BY SUM(T1.`Enrollment (K-12)`) ASC LIMIT 5;"
        ),
    ),
    PairCase(
        signal=Signal.INCORRECT_JOIN_PREDICATE,
        db_id="financial",
        question="How many female clients are from the Jesenik branch?",
        evidence="gender = 'F' refers to female; A2 contains the branch "
                 "location",
        incorrect_sql=(
            "SELECT (SELECT COUNT(DISTINCT client.client_id) "
            "FROM client INNER JOIN account "
            "ON client.client_id = account.account_id "
            "INNER JOIN district "
            "ON account.district_id = district.district_id "
            "WHERE district.a2 = 'Jesenik' "
            "AND client.gender = 'F') AS num_female_clients;"
        ),
        correct_sql=(
            "SELECT COUNT(T1.client_id) FROM client AS T1 "
            "INNER JOIN district AS T2 "
            "ON T1.district_id = T2.district_id "
            "WHERE T1.gender = 'F' AND T2.A2 = 'Jesenik';"
        ),
    ),
    PairCase(
        signal=Signal.SUBOPTIMAL_JOIN_TREE,
        db_id="financial",
        question="What region does client 3541 live in?",
        evidence="A3 refers to the region",
        incorrect_sql=(
            "SELECT d.a3 FROM client c "
            "JOIN disp di ON c.client_id = di.client_id "
            "JOIN account a ON di.account_id = a.account_id "
            "JOIN district d ON a.district_id = d.district_id "
            "WHERE c.client_id = 3541 LIMIT 1;"
        ),
        correct_sql=(
            "SELECT T1.a3 FROM district T1 "
            "INNER JOIN client T2 ON T1.district_id = T2.district_id "
            "WHERE T2.client_id = 3541;"
        ),
    ),
    PairCase(
        signal=Signal.TABLE_SIMILARITY,
        db_id="formula_1",
        question="What is the average number of points scored by Lewis "
                 "Hamilton in the Turkish Grand Prix?",
        evidence="",
        incorrect_sql=(
            "SELECT AVG(r.points) AS avg_score "
            "FROM results r JOIN drivers d ON r.driverId = d.driverId "
            "JOIN races ra ON r.raceId = ra.raceId "
            "WHERE d.forename = 'Lewis' AND d.surname = 'Hamilton' "
            "AND ra.raceId IN ( SELECT raceId FROM races "
            "WHERE name LIKE '%Turkish Grand Prix%' );"
        ),
        correct_sql=(
            "SELECT AVG(T2.points) FROM drivers AS T1 "
            "INNER JOIN driverStandings AS T2 "
            "ON T1.driverId = T2.driverId "
            "INNER JOIN races AS T3 ON T3.raceId = T2.raceId "
            "WHERE T1.forename = 'Lewis' AND T1.surname = 'Hamilton' "
            "AND T3.name = 'Turkish Grand Prix';"
        ),
    ),
    PairCase(
        signal=Signal.UNNECESSARY_SUBQUERY,
        db_id="card_games",
        question="Among the promotional cards, what are the name, artist, and "
                 "promo status of the card with the most rulings?",
        evidence="isPromo = 1 refers to promotional cards",
        incorrect_sql=(
            "SELECT (SELECT c.name FROM cards c WHERE c.uuid = "
            "(SELECT uuid FROM rulings)) AS card_name, "
            "(SELECT c.artist FROM cards c WHERE c.uuid = "
            "(SELECT uuid FROM rulings)) AS artist, "
            "(SELECT c.ispromo FROM cards c WHERE c.uuid = "
            "(SELECT uuid FROM rulings)) AS is_promo;"
        ),
        correct_sql=(
            "SELECT T1.name, T1.artist, T1.isPromo "
            "FROM cards AS T1 INNER JOIN rulings AS T2 "
            "ON T1.uuid = T2.uuid WHERE T1.isPromo = 1 "
            "GROUP BY T1.artist ORDER BY "
            "COUNT(DISTINCT T1.uuid) DESC LIMIT 1;"
        ),
    ),
    PairCase(
        signal=Signal.VALUE_AMBIGUITY,
        db_id="card_games",
        question="List the artists of cards whose foreign language is "
                 "Phyrexian.",
        evidence="",
        incorrect_sql=(
            "SELECT c.`artist` FROM `cards` c "
            "JOIN `foreign_data` f ON c.`uuid` = f.`uuid` "
            "WHERE c.`watermark` = 'phyrexian' "
            "AND c.`artist` IS NOT NULL GROUP BY c.`artist`;"
        ),
        correct_sql=(
            "SELECT T1.artist FROM cards AS T1 "
            "INNER JOIN foreign_data AS T2 ON T1.uuid = T2.uuid "
            "WHERE T2.language = 'Phyrexian';"
        ),
    ),
)


# ---------------------------------------------------------------------------
# The end-to-end regression case: a hallucinated join plus two wrong literal
# values on the banking schema.  The broken query returns 0 where the gold
# query returns 26.

REGRESSION_QUESTION = "How many female clients are from the Jesenik branch?"
REGRESSION_EVIDENCE = (
    "gender = 'F' refers to female; A2 contains the branch location"
)
REGRESSION_SQL = (
    "SELECT (SELECT COUNT(DISTINCT client.client_id) "
    "FROM client INNER JOIN account "
    "ON client.client_id = account.account_id "
    "INNER JOIN district "
    "ON account.district_id = district.district_id "
    "WHERE client.gender = 'Female' "
    "AND district.a2 = 'jesenik') AS num_female_clients;"
)
REGRESSION_GOLD_SQL = (
    "SELECT COUNT(T1.client_id) FROM client AS T1 "
    "INNER JOIN district AS T2 ON T1.district_id = T2.district_id "
    "WHERE T1.gender = 'F' AND T2.A2 = 'Jesenik';"
)
