#!/usr/bin/env python3
"""Rebuilds the fixture databases and stub tables.

Run from anywhere: python3 fixtures/build.py
The outputs are committed; rerun only after editing this file or sql/.
"""

import json
import sqlite3
from pathlib import Path

HERE = Path(__file__).resolve().parent


def build_dbs():
    for script in sorted((HERE / "sql").glob("*.sql")):
        db = HERE / "db" / f"{script.stem}.sqlite"
        db.unlink(missing_ok=True)
        con = sqlite3.connect(db)
        con.executescript(script.read_text())
        con.commit()
        con.close()


def answer(sql):
    return f"<thinking>\nWork through the schema.\n</thinking>\n<answer>\nFinal query:\n```sql\n{sql}\n```\n</answer>"


def dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def entry(initial, pointwise, quality=None, judge=True, resampled=None, **extra):
    e = {
        "initial": [answer(s) for s in initial],
        "pointwise": pointwise,
        "quality": quality or {},
        "judge": {"likely_has_correct": judge, "confidence": 0.8, "reason_tags": [], "support": {"best_cand_idx": None, "notes": None}},
    }
    if resampled:
        e["resampled"] = [answer(s) for s in resampled]
    e.update(extra)
    return e


# Figure-1 case: s2 and s4 (indices 1 and 3) are correct, G1 = {0, 2, 4}
# counts chlorine atoms instead of molecules, and s6 drops the label filter.
CHLORINE_QUESTION = "In the non-carcinogenic molecules, how many contain chlorine atoms?"
CHLORINE_EVIDENCE = "non-carcinogenic molecules refers to label = '-'; chlorine atoms refers to element = 'cl'"
CHLORINE_GOLD = (
    "SELECT COUNT(DISTINCT T1.molecule_id) FROM molecule AS T1 INNER JOIN atom AS T2 "
    "ON T1.molecule_id = T2.molecule_id WHERE T1.label = '-' AND T2.element = 'cl'"
)
CHLORINE_POOL = [
    "SELECT COUNT(T2.molecule_id) FROM molecule AS T1 JOIN atom AS T2 ON T1.molecule_id = T2.molecule_id WHERE T1.label = '-' AND T2.element = 'cl'",
    "SELECT COUNT(DISTINCT m.molecule_id) FROM molecule AS m JOIN atom AS a ON m.molecule_id = a.molecule_id WHERE m.label = '-' AND a.element = 'cl'",
    "SELECT COUNT(*) FROM atom WHERE molecule_id IN (SELECT molecule_id FROM molecule WHERE label = '-') AND element = 'cl'",
    "SELECT COUNT(*) FROM molecule WHERE label = '-' AND molecule_id IN (SELECT molecule_id FROM atom WHERE element = 'cl')",
    "SELECT COUNT(a.atom_id) FROM atom AS a JOIN molecule AS m ON a.molecule_id = m.molecule_id WHERE m.label = '-' AND a.element = 'cl'",
    "SELECT COUNT(DISTINCT molecule_id) FROM atom WHERE element = 'cl'",
]
# the pointwise ranker puts an incorrect candidate first
CHLORINE_POINTWISE = [-3.8625, -4.8750, -5.0250, -4.9000, -4.9500, -5.5000]
CHLORINE_QUALITY = [0.5, 1.0, 0.5, 1.0, 0.5, 0.0]


def build_chlorine():
    stub = {
        "tasks": {
            "chlorine": entry(
                CHLORINE_POOL,
                dict(zip(CHLORINE_POOL, CHLORINE_POINTWISE)),
                dict(zip(CHLORINE_POOL, CHLORINE_QUALITY)),
            )
        }
    }
    dump(HERE / "stubs" / "chlorine.json", stub)
    dump(HERE / "pools" / "chlorine.json", CHLORINE_POOL)
    dump(
        HERE / "datasets" / "chlorine.json",
        [{"question_id": "chlorine", "question": CHLORINE_QUESTION, "evidence": CHLORINE_EVIDENCE, "db_id": "chem", "SQL": CHLORINE_GOLD}],
    )
    dump(HERE / "configs" / "chlorine.json", {"n": 6, "m": 12})


def scores(sqls, values):
    return dict(zip(sqls, values))


def build_eval12():
    tasks = []
    stubs = {}

    def add(tid, db, question, gold, evidence=None, stub=None):
        rec = {"question_id": tid, "question": question, "db_id": db, "SQL": gold}
        if evidence:
            rec["evidence"] = evidence
        tasks.append(rec)
        if stub is not None:
            stubs[tid] = stub

    # t01: correct pair vs incorrect pair of equal size; ranker prefers correct -> correct
    c = [CHLORINE_POOL[0], CHLORINE_POOL[1], CHLORINE_POOL[2], CHLORINE_POOL[3]]
    add("t01", "chem", CHLORINE_QUESTION, CHLORINE_GOLD, CHLORINE_EVIDENCE,
        entry(c, scores(c, [0.9, 0.6, 0.4, 0.5]), scores(c, [0.2, 0.9, 0.2, 0.9])))

    # t02: every candidate agrees -> correct
    c = [
        "SELECT COUNT(*) FROM molecule WHERE label = '+'",
        "SELECT COUNT(molecule_id) FROM molecule WHERE label = '+'",
        "SELECT COUNT(*) FROM molecule AS m WHERE m.label = '+'",
        "SELECT SUM(CASE WHEN label = '+' THEN 1 ELSE 0 END) FROM molecule",
    ]
    add("t02", "chem", "How many molecules are carcinogenic?", "SELECT COUNT(molecule_id) FROM molecule WHERE label = '+'",
        "carcinogenic refers to label = '+'", entry(c, scores(c, [0.5, 0.4, 0.3, 0.2])))

    # t03: ranker prefers the duplicate-keeping query -> incorrect
    c = [
        "SELECT DISTINCT element FROM atom WHERE molecule_id = 'TR001'",
        "SELECT element FROM atom WHERE molecule_id = 'TR001'",
        "SELECT DISTINCT element FROM atom WHERE molecule_id = 'TR002'",
        "SELECT DISTINCT element FROM atom WHER molecule_id = 'TR001'",
    ]
    add("t03", "chem", "List the elements that make up molecule TR001.",
        "SELECT DISTINCT T.element FROM atom AS T WHERE T.molecule_id = 'TR001'", None,
        entry(c, scores(c, [0.3, 0.8, 0.2, 0.1]), scores(c[:3], [0.5, 1.0, 0.1])))

    # t04: gold returns no rows -> excluded, no stub needed
    add("t04", "chem", "Which atoms are xenon?", "SELECT atom_id FROM atom WHERE element = 'xx'")

    # t05: AVG and SUM/COUNT agree within tolerance -> correct
    c = [
        "SELECT AVG(gpa) FROM student WHERE grade = 10",
        "SELECT SUM(gpa) / COUNT(*) FROM student WHERE grade = 10",
        "SELECT AVG(gpa) FROM student",
        "SELECT AVG(s.gpa) FROM student AS s WHERE s.grade = 10",
    ]
    add("t05", "school", "What is the average GPA of grade 10 students?",
        "SELECT AVG(gpa) FROM student WHERE grade = 10", None,
        entry(c, scores(c, [0.7, 0.5, 0.9, 0.6]), scores(c, [1.0, 1.0, 0.0, 1.0])))

    # t06: nothing correct initially; judge says so; resampling finds it -> correct
    c = [
        "SELECT name FROM student WHERE club_id = 2",
        "SELECT name FROM student WHERE grade = 10",
        "SELECT name FROM student WHERE club = 'chess'",
        "SELECT name FROM student WHERE club_id = 99",
    ]
    r = [
        "SELECT name FROM student WHERE club_id = 3",
        "SELECT s.name FROM student AS s JOIN club AS c ON s.club_id = c.id WHERE c.name = 'chess'",
        "SELECT name FROM student WHERE club_id = (SELECT id FROM club WHERE name = 'chess')",
        "SELECT name FROM student WHERE club_id = 2",
        "SELECT name FROM club WHERE name = 'chess'",
        "SELECT name FROM student WHERE club_id IN (SELECT id FROM club WHERE name = 'chess')",
        "SELECT name FROM student",
        "SELECT COUNT(*) FROM student WHERE club_id = 1",
    ]
    pw = scores(c, [0.3, 0.2, 0.1, 0.0])
    # pruned to n=4: r[1] 0.9, r[2] 0.8, r[0] 0.7, r[4] 0.6
    pw.update(scores(r, [0.7, 0.9, 0.8, 0.5, 0.6, 0.4, 0.3, 0.2]))
    add("t06", "school", "List the names of students in the chess club.",
        "SELECT T1.name FROM student AS T1 INNER JOIN club AS T2 ON T1.club_id = T2.id WHERE T2.name = 'chess'", None,
        entry(c, pw, scores(r, [0.2, 1.0, 1.0, 0.2, 0.0, 1.0, 0.1, 0.0]), judge=False, resampled=r))

    # t07: judge flags the pool but the resample is still all wrong -> incorrect
    c = [
        "SELECT name FROM student WHERE club_id = 2",
        "SELECT name FROM student WHERE club_id = 2 AND gpa > 3",
        "SELECT name FROM student WHERE gpa > 3.15",
        "SELECT name FROM student WHERE club_id = 2 AND gpa > 3.5",
    ]
    r = [
        "SELECT name FROM student WHERE club_id = 2 AND gpa >= 3.1",
        "SELECT name FROM student WHERE gpa > 3.15 AND grade = 10",
        "SELECT name FROM student WHERE club_id = 1 AND gpa > 3.15",
        "SELECT name FROM student WHERE club_id = 2",
        "SELECT name FROM student WHERE gpa < 3.15",
        "SELECT name FROM student WHERE club_id = 3",
        "SELECT name FROM club WHERE name = 'drama'",
        "SELECT COUNT(*) FROM student WHERE club_id = 2",
    ]
    pw = scores(c, [0.4, 0.3, 0.2, 0.1])
    # pruned: r[0] 0.9, r[1] 0.8, r[2] 0.7, r[3] 0.6
    pw.update(scores(r, [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2]))
    add("t07", "school", "Which drama club members have a GPA above 3.15?",
        "SELECT s.name FROM student AS s JOIN club AS c ON s.club_id = c.id WHERE c.name = 'drama' AND s.gpa > 3.15", None,
        entry(c, pw, scores(r, [0.9, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0, 0.0]), judge=False, resampled=r))

    # t08: gold references a missing column -> excluded
    add("t08", "school", "What are the students' nicknames?", "SELECT nickname FROM student")

    # t09: correct singleton beats an incorrect triple -> correct
    c = [
        "SELECT COUNT(*) FROM student WHERE club_id = 0",
        "SELECT COUNT(*) FROM student WHERE club_id IS NULL",
        "SELECT COUNT(*) FROM student WHERE club_id = ''",
        "SELECT COUNT(*) FROM student AS s LEFT JOIN club AS c ON s.club_id = c.id WHERE c.name = NULL",
    ]
    add("t09", "school", "How many students are not in any club?",
        "SELECT COUNT(id) FROM student WHERE club_id IS NULL", None,
        entry(c, scores(c, [0.8, 0.6, 0.4, 0.2]), scores(c, [0.1, 0.9, 0.1, 0.1])))

    # t10: every initial candidate errors; judge bypassed, resample succeeds -> correct
    c = [
        "SELECT SUM(quantity) FROM orders WHERE product_id = 1",
        "SELECT SUM(qty) FROM order WHERE product_id = 1",
        "SELECT SUM(qty) FROM orders WHERE product = 'pen'",
        "SELEC SUM(qty) FROM orders",
    ]
    r = [
        "SELECT SUM(o.qty) FROM orders AS o JOIN product AS p ON o.product_id = p.id WHERE p.name = 'pen'",
        "SELECT COUNT(*) FROM orders WHERE product_id = 1",
        "SELECT SUM(qty) FROM orders WHERE product_id = 1",
        "SELECT SUM(qty) FROM orders",
        "SELECT SUM(qty) FROM orders WHERE product_id = (SELECT id FROM product WHERE name = 'pen')",
        "SELECT qty FROM orders WHERE product_id = 1",
        "SELECT MAX(qty) FROM orders WHERE product_id = 1",
        "SELECT SUM(qty) FROM orders WHERE day = '2024-01-01'",
    ]
    pw = scores(c, [0.4, 0.3, 0.2, 0.1])
    # pruned: r[0] 0.95, r[2] 0.9, r[1] 0.85, r[3] 0.8
    pw.update(scores(r, [0.95, 0.85, 0.9, 0.8, 0.5, 0.4, 0.3, 0.2]))
    add("t10", "shop", "What is the total quantity ordered of the pen?",
        "SELECT SUM(T2.qty) FROM product AS T1 INNER JOIN orders AS T2 ON T1.id = T2.product_id WHERE T1.name = 'pen'", None,
        entry(c, pw, scores(r, [1.0, 0.2, 1.0, 0.1, 1.0, 0.0, 0.0, 0.0]), resampled=r))

    # t11: pure position bias ties every vote at 1/2; the wrong group leads on
    # utility and the strict final comparison hands the win to the runner-up -> correct
    c = [
        "SELECT name FROM product ORDER BY price DESC LIMIT 1",
        "SELECT name FROM product WHERE price = (SELECT MAX(price) FROM product)",
        "SELECT name FROM product ORDER BY price LIMIT 1",
        "SELECT name FROM product ORDER BY price ASC LIMIT 1",
    ]
    add("t11", "shop", "Which product is the most expensive?",
        "SELECT name FROM product ORDER BY price DESC LIMIT 1", None,
        entry(c, scores(c, [0.8, 0.7, 0.9, 0.1]), position_bias=True))

    # t12: ranker prefers summing quantities over counting orders -> incorrect
    c = [
        "SELECT COUNT(*) FROM orders WHERE day = '2024-01-02'",
        "SELECT COUNT(id) FROM orders WHERE day = '2024-01-02'",
        "SELECT SUM(qty) FROM orders WHERE day = '2024-01-02'",
        "SELECT SUM(qty) FROM orders WHERE day LIKE '2024-01-02%'",
    ]
    add("t12", "shop", "How many orders were placed on 2024-01-02?",
        "SELECT COUNT(id) FROM orders WHERE day = '2024-01-02'", None,
        entry(c, scores(c, [0.6, 0.5, 0.4, 0.3]), scores(c, [0.3, 0.3, 0.8, 0.8])))

    dump(HERE / "datasets" / "eval12.json", tasks)
    dump(HERE / "stubs" / "eval12.json", {"tasks": stubs})
    dump(HERE / "configs" / "eval12.json", {"n": 4, "m": 8})


def build_grids():
    dump(HERE / "grids" / "modes.json", {"variants": [
        {"name": "r3", "overrides": {"mode": "r3"}},
        {"name": "fmv", "overrides": {"mode": "fmv"}},
        {"name": "pointwise", "overrides": {"mode": "pointwise"}},
        {"name": "pointwise_avg", "overrides": {"mode": "pointwise_avg"}},
        {"name": "listwise", "overrides": {"mode": "listwise"}},
    ]})
    dump(HERE / "grids" / "tau.json", {"variants": [
        {"name": f"tau_{t}", "overrides": {"tau": t}} for t in [0.0, 0.05, 0.25, 0.5, 1.0]
    ]})
    dump(HERE / "grids" / "resampling.json", {"variants": [
        {"name": m, "overrides": {"resampling": m}} for m in ["off", "always", "agentic"]
    ]})


if __name__ == "__main__":
    for d in ["db", "stubs", "datasets", "pools", "grids", "configs"]:
        (HERE / d).mkdir(exist_ok=True)
    build_dbs()
    build_chlorine()
    build_eval12()
    build_grids()
