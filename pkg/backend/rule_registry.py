"""
Rule Registry - documentation of every transition rule the engines can fire
Used to validate strategy filters, to label trace steps, and by `scooplock rules`
"""

from typing import Dict, List, Optional

CONCRETE = "concrete"
ABSTRACT = "abstract"


class RuleRegistry:
    """Registry of the concrete and abstract transition rules with their stack items"""

    @staticmethod
    def get_all_rules() -> Dict[str, Dict]:
        """Returns documentation for every rule name, keyed by name"""
        return {
            # Instruction rules
            "create": {
                "category": "Instructions",
                "item": "instruction(create)",
                "description": "Allocate an object (on a fresh processor for T-tagged types), bind the target, then push the creation call",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "create ('f1 . 'make(nil))",
            },
            "assign": {
                "category": "Instructions",
                "item": "instruction(assign)",
                "description": "Concrete: unfold t := s into eval(a, s); wait(a); write(t, a) with a fresh channel a. Abstract: update the alias relation in one step",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": True,
                "example": "assign ('left, 'fl)",
            },
            "command": {
                "category": "Instructions",
                "item": "instruction(command)",
                "description": "Evaluate target and arguments, push lock(handlers) when something must be reserved, then the apply item",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "command ('m . 'do_wrong(nil))",
            },
            "skip": {
                "category": "Instructions",
                "item": "instruction(nil)",
                "description": "Pop a nil instruction",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "nil ;",
            },
            "branch": {
                "category": "Instructions",
                "item": "instruction(if)",
                "description": "Concrete: splice the branch selected by the condition. Abstract: union the alias effects of both branches",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "if True then ( ... ) else ( ... ) end",
            },

            # Channel rules
            "eval": {
                "category": "Channels",
                "item": "eval(a, s)",
                "description": "Evaluate s in the current frame and put the reference on channel a",
                "engines": [CONCRETE],
                "administrative": False,
                "example": "eval(a, 'fl)",
            },
            "wait": {
                "category": "Channels",
                "item": "wait(a)",
                "description": "Pop once channel a holds data",
                "engines": [CONCRETE],
                "administrative": False,
                "example": "wait(a)",
            },
            "write": {
                "category": "Channels",
                "item": "write(t, a)",
                "description": "Store the data of channel a into t and consume the channel",
                "engines": [CONCRETE],
                "administrative": False,
                "example": "write('left, a)",
            },

            # Locking rules
            "lock": {
                "category": "Locks",
                "item": "lock(Q)",
                "description": "Atomically reserve every handler in Q that is not yet held; blocks while another processor holds one",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "lock({h(f1), h(f2)})",
            },
            "reenter": {
                "category": "Locks",
                "item": "lock(Q)",
                "description": "Pop a lock item whose handlers are all held already",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "lock({h(f1)}) while holding h(f1)",
            },
            "release": {
                "category": "Locks",
                "item": "release(Q)",
                "description": "Give back the handlers reserved during the routine that is ending",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "release({h(f1)})",
            },

            # Call rules
            "enqueue": {
                "category": "Calls",
                "item": "apply(f, target, args)",
                "description": "Append an asynchronous request to the bottom of the target handler's stack",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "p2 :: apply(eat_wrong, p1) -> p5 :: ...; apply(eat_wrong, p1)",
            },
            "apply": {
                "category": "Calls",
                "item": "apply(f, target, args)",
                "description": "Push a frame for the routine, its body, its release item and frame_pop; abstract targets on other handlers are queued there",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "apply(pick_two, p1, f1, f2)",
            },
            "frame_pop": {
                "category": "Calls",
                "item": "frame_pop",
                "description": "Discard the frame of a finished routine",
                "engines": [CONCRETE, ABSTRACT],
                "administrative": False,
                "example": "frame_pop",
            },
        }

    @staticmethod
    def get_rules_by_category() -> Dict[str, Dict[str, Dict]]:
        """Organize rules by category"""
        by_category: Dict[str, Dict[str, Dict]] = {}
        for rule_name, rule_info in RuleRegistry.get_all_rules().items():
            by_category.setdefault(rule_info["category"], {})[rule_name] = rule_info
        return by_category

    @staticmethod
    def rule_names(engine: Optional[str] = None) -> List[str]:
        rules = RuleRegistry.get_all_rules()
        return sorted(name for name, info in rules.items() if engine is None or engine in info["engines"])

    @staticmethod
    def is_known(rule_name: str) -> bool:
        return rule_name in RuleRegistry.get_all_rules()

    @staticmethod
    def is_administrative(rule_name: str, engine: str = CONCRETE) -> bool:
        """Administrative rules only unfold an instruction; they are not counted as processor steps"""
        info = RuleRegistry.get_all_rules().get(rule_name)
        return bool(info and engine == CONCRETE and info["administrative"])

    @staticmethod
    def get_rule_documentation(rule_name: str) -> Optional[Dict]:
        return RuleRegistry.get_all_rules().get(rule_name)

    @staticmethod
    def generate_rule_reference() -> str:
        """Markdown reference of all rules, grouped by category"""
        text = "# Transition rules\n"
        for category, rules in RuleRegistry.get_rules_by_category().items():
            text += f"\n## {category}\n\n"
            for rule_name, info in rules.items():
                text += f"**{rule_name}** on `{info['item']}` ({', '.join(info['engines'])})\n"
                text += f"- {info['description']}\n"
                if info["administrative"]:
                    text += "- administrative in the concrete engine (not a processor step)\n"
                text += f"- Example: {info['example']}\n\n"
        return text
