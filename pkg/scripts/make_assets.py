"""Regenerate the bundled gripper assets under src/ugcs/assets/."""

import os

from ugcs.mesh import box_mesh, save_obj

ROOT = os.path.join(os.path.dirname(__file__), "..", "src", "ugcs", "assets")


def write(name, urdf, boxes):
    d = os.path.join(ROOT, name)
    os.makedirs(d, exist_ok=True)
    for fname, (lo, hi) in boxes.items():
        save_obj(box_mesh(lo, hi), os.path.join(d, fname))
    with open(os.path.join(d, name + ".urdf"), "w") as fh:
        fh.write(urdf.strip() + "\n")


def link(name, mesh):
    return f'''  <link name="{name}">
    <collision><geometry><mesh filename="{mesh}"/></geometry></collision>
  </link>'''


def joint(name, jtype, parent, child, xyz="0 0 0", axis="1 0 0", limit=None, mimic=None):
    out = [f'  <joint name="{name}" type="{jtype}">',
           f'    <parent link="{parent}"/>', f'    <child link="{child}"/>',
           f'    <origin xyz="{xyz}" rpy="0 0 0"/>', f'    <axis xyz="{axis}"/>']
    if limit is not None:
        out.append(f'    <limit lower="{limit[0]}" upper="{limit[1]}"/>')
    if mimic is not None:
        out.append(f'    <mimic joint="{mimic}" multiplier="1" offset="0"/>')
    out.append("  </joint>")
    return "\n".join(out)


def robot(name, palm, parts):
    return f'<robot name="{name}">\n' + "\n".join(parts) + f'\n  <ugcs palm_link="{palm}"/>\n</robot>'


JAW_PALM = ((-0.028, -0.02, 0.0), (0.028, 0.02, 0.01))
JAW_RIGHT = ((0.0, -0.025, -0.06), (0.01, 0.025, 0.0))
JAW_LEFT = ((-0.01, -0.025, -0.06), (0.0, 0.025, 0.0))


def parallel_jaw():
    boxes = {"palm.obj": JAW_PALM, "finger_right.obj": JAW_RIGHT, "finger_left.obj": JAW_LEFT}
    parts = [link("palm", "palm.obj"), link("finger_right", "finger_right.obj"),
             link("finger_left", "finger_left.obj"),
             joint("finger_right_joint", "prismatic", "palm", "finger_right", axis="1 0 0", limit=(0.0, 0.05)),
             joint("finger_left_joint", "prismatic", "palm", "finger_left", axis="-1 0 0",
                   mimic="finger_right_joint")]
    write("parallel_jaw", robot("parallel_jaw", "palm", parts), boxes)


def parallel_jaw_mirrored():
    # same geometry; the actuated joint drives the -x finger and the +x finger follows
    boxes = {"palm.obj": JAW_PALM, "finger_a.obj": JAW_LEFT, "finger_b.obj": JAW_RIGHT}
    parts = [link("palm", "palm.obj"), link("finger_a", "finger_a.obj"), link("finger_b", "finger_b.obj"),
             joint("finger_a_joint", "prismatic", "palm", "finger_a", axis="-1 0 0", limit=(0.0, 0.05)),
             joint("finger_b_joint", "prismatic", "palm", "finger_b", axis="1 0 0", mimic="finger_a_joint")]
    write("parallel_jaw_mirrored", robot("parallel_jaw_mirrored", "palm", parts), boxes)


def parallel_jaw_closed():
    boxes = {"palm.obj": JAW_PALM, "finger_right.obj": JAW_RIGHT, "finger_left.obj": JAW_LEFT}
    parts = [link("palm", "palm.obj"), link("finger_right", "finger_right.obj"),
             link("finger_left", "finger_left.obj"),
             joint("finger_right_joint", "fixed", "palm", "finger_right"),
             joint("finger_left_joint", "fixed", "palm", "finger_left")]
    write("parallel_jaw_closed", robot("parallel_jaw_closed", "palm", parts), boxes)


def finger_chain(prefix, base, side, lengths, limits):
    """Revolute finger hanging along -z; ``side`` +1 sits at +x and curls toward -x."""
    boxes, parts = {}, []
    axis = "0 1 0" if side > 0 else "0 -1 0"
    x0, x1 = (0.0, 0.01) if side > 0 else (-0.01, 0.0)
    parent, xyz = "palm", f"{base[0]} {base[1]} 0"
    for k, (length, lim) in enumerate(zip(lengths, limits)):
        name = f"{prefix}_{k}"
        boxes[name + ".obj"] = ((x0, -0.01, -length), (x1, 0.01, 0.0))
        parts.append(link(name, name + ".obj"))
        parts.append(joint(name + "_joint", "revolute", parent, name, xyz=xyz, axis=axis, limit=lim))
        parent, xyz = name, f"0 0 {-length}"
    return boxes, parts


def multi_finger(name, fingers, palm_box):
    boxes = {"palm.obj": palm_box}
    parts = [link("palm", "palm.obj")]
    for args in fingers:
        b, p = finger_chain(*args)
        boxes.update(b)
        parts += p
    write(name, robot(name, "palm", parts), boxes)


def three_finger():
    prox, dist = (-0.25, 1.5), (0.0, 1.5)
    multi_finger("three_finger", [
        ("thumb", (0.04, 0.0), +1, (0.05, 0.04), (prox, dist)),
        ("finger1", (-0.04, 0.025), -1, (0.05, 0.04), (prox, dist)),
        ("finger2", (-0.04, -0.025), -1, (0.05, 0.04), (prox, dist)),
    ], ((-0.03, -0.035, 0.0), (0.03, 0.035, 0.01)))


def hand5():
    prox, dist = (-0.25, 1.5), (0.0, 1.5)
    multi_finger("hand5", [
        ("thumb", (0.04, 0.0), +1, (0.08,), (prox,)),
        ("index", (-0.04, 0.025), -1, (0.05, 0.035), (prox, dist)),
        ("middle", (-0.04, -0.025), -1, (0.05, 0.035), (prox, dist)),
    ], ((-0.03, -0.035, 0.0), (0.03, 0.035, 0.01)))


if __name__ == "__main__":
    parallel_jaw()
    parallel_jaw_mirrored()
    parallel_jaw_closed()
    three_finger()
    hand5()
